//! World state and relational snapshots.
//!
//! A [`SceneGraph`] is the complete graph over the objects of a world at one
//! instant. Two snapshots over the same node set produce a [`DiffGraph`],
//! whose per-edge records drive the salience trigger.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vec3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Agent,
    Obstacle,
    Projectile,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ObjectState<T> {
    pub id: String,
    pub kind: ObjectKind,
    pub position: Vec3<T>,
    pub velocity: Vec3<T>,
    pub acceleration: Vec3<T>,
    pub radius: T,
    pub mass: T,
}

impl<T: Scalar> ObjectState<T> {
    /// A unit-mass point at `position` with no motion.
    pub fn at_rest(id: impl Into<String>, kind: ObjectKind, position: Vec3<T>) -> Self {
        Self {
            id: id.into(),
            kind,
            position,
            velocity: Vec3::zero(),
            acceleration: Vec3::zero(),
            radius: T::zero(),
            mass: T::one(),
        }
    }

    pub fn with_velocity(mut self, velocity: Vec3<T>) -> Self {
        self.velocity = velocity;
        self
    }

    pub fn with_acceleration(mut self, acceleration: Vec3<T>) -> Self {
        self.acceleration = acceleration;
        self
    }

    pub fn with_radius(mut self, radius: T) -> Self {
        self.radius = radius;
        self
    }

    pub fn with_mass(mut self, mass: T) -> Self {
        self.mass = mass;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= T::zero()) {
            return Err(Error::invalid(format!("object `{}`: radius must be >= 0", self.id)));
        }
        if !(self.mass > T::zero()) {
            return Err(Error::invalid(format!("object `{}`: mass must be > 0", self.id)));
        }
        if !(self.position.is_finite() && self.velocity.is_finite() && self.acceleration.is_finite()) {
            return Err(Error::invalid(format!("object `{}`: non-finite kinematics", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct WorldState<T> {
    pub timestamp: T,
    pub objects: Vec<ObjectState<T>>,
}

impl<T: Scalar> WorldState<T> {
    pub fn new(timestamp: T, objects: Vec<ObjectState<T>>) -> Self {
        Self { timestamp, objects }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timestamp >= T::zero()) {
            return Err(Error::invalid("timestamp must be non-negative"));
        }
        check_unique_ids(&self.objects)?;
        self.objects.iter().try_for_each(ObjectState::validate)
    }

    pub fn get(&self, id: &str) -> Option<&ObjectState<T>> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut ObjectState<T>> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn first_of_kind(&self, kind: ObjectKind) -> Option<&ObjectState<T>> {
        self.objects.iter().find(|o| o.kind == kind)
    }

    /// Compact JSON document used for the `{state}` prompt slot.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("world state serializes")
    }
}

fn check_unique_ids<T>(objects: &[ObjectState<T>]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for o in objects {
        if !seen.insert(o.id.as_str()) {
            return Err(Error::invalid(format!("duplicate object id `{}`", o.id)));
        }
    }
    Ok(())
}

/// Unordered pair of object ids, stored with `a < b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub a: String,
    pub b: String,
}

impl EdgeKey {
    pub fn new(x: &str, y: &str) -> Self {
        if x <= y {
            Self { a: x.to_owned(), b: y.to_owned() }
        } else {
            Self { a: y.to_owned(), b: x.to_owned() }
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.a == id || self.b == id
    }
}

impl std::fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.a, self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SceneEdge<T> {
    pub key: EdgeKey,
    /// Center-to-center distance, m.
    pub distance: T,
    /// |v_a - v_b|, m/s.
    pub relative_speed: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SceneGraph<T> {
    pub timestamp: T,
    /// Sorted node ids.
    pub nodes: Vec<String>,
    /// Complete edge set, sorted by key.
    pub edges: Vec<SceneEdge<T>>,
}

impl<T: Scalar> SceneGraph<T> {
    pub fn edge(&self, key: &EdgeKey) -> Option<&SceneEdge<T>> {
        self.edges
            .binary_search_by(|e| e.key.cmp(key))
            .ok()
            .map(|i| &self.edges[i])
    }
}

pub fn build_scene_graph<T: Scalar>(objects: &[ObjectState<T>], timestamp: T) -> Result<SceneGraph<T>> {
    if objects.is_empty() {
        return Err(Error::invalid("scene graph needs at least one object"));
    }
    check_unique_ids(objects)?;

    let mut sorted: Vec<&ObjectState<T>> = objects.iter().collect();
    sorted.sort_by(|l, r| l.id.cmp(&r.id));

    let mut edges = Vec::with_capacity(sorted.len() * (sorted.len() - 1) / 2);
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            edges.push(SceneEdge {
                key: EdgeKey::new(&a.id, &b.id),
                distance: a.position.distance(b.position),
                relative_speed: (a.velocity - b.velocity).norm(),
            });
        }
    }

    Ok(SceneGraph {
        timestamp,
        nodes: sorted.iter().map(|o| o.id.clone()).collect(),
        edges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct EdgeDelta<T> {
    pub key: EdgeKey,
    pub distance_prev: T,
    pub distance_next: T,
    /// distance_next - distance_prev, m.
    pub displacement_delta: T,
    /// displacement_delta / dt_obs, m/s. Negative when closing.
    pub relative_velocity: T,
    pub approaching: bool,
    pub appeared: bool,
    pub vanished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct DiffGraph<T> {
    pub dt_obs: T,
    pub timestamp: T,
    pub edges: Vec<EdgeDelta<T>>,
}

/// Pointwise difference of two snapshots over the same node set.
///
/// Node sets must match exactly, so the appeared/vanished flags are always
/// false here; they exist for snapshot sources that track entity lifetimes.
pub fn diff_graph<T: Scalar>(prev: &SceneGraph<T>, next: &SceneGraph<T>) -> Result<DiffGraph<T>> {
    if prev.nodes != next.nodes {
        return Err(Error::invalid("snapshots have different node sets"));
    }
    let dt_obs = next.timestamp - prev.timestamp;
    if !(dt_obs > T::zero()) {
        return Err(Error::invalid("snapshot timestamps must strictly increase"));
    }

    let edges = prev
        .edges
        .iter()
        .zip(&next.edges)
        .map(|(p, n)| {
            debug_assert_eq!(p.key, n.key);
            let delta = n.distance - p.distance;
            EdgeDelta {
                key: p.key.clone(),
                distance_prev: p.distance,
                distance_next: n.distance,
                displacement_delta: delta,
                relative_velocity: delta / dt_obs,
                approaching: delta < T::zero(),
                appeared: false,
                vanished: false,
            }
        })
        .collect();

    Ok(DiffGraph { dt_obs, timestamp: next.timestamp, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: &str, p: [f64; 3]) -> ObjectState<f64> {
        ObjectState::at_rest(id, ObjectKind::Generic, p.into())
    }

    #[test]
    fn three_objects_three_edges() {
        let g = build_scene_graph(&[obj("A", [0.0; 3]), obj("B", [1.0, 0.0, 0.0]), obj("C", [0.0, 1.0, 0.0])], 0.0).unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.edges.len(), 3);
    }

    #[test]
    fn single_object_no_edges() {
        let g = build_scene_graph(&[obj("A", [0.0; 3])], 0.0).unwrap();
        assert_eq!(g.nodes, vec!["A".to_string()]);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn edge_distance_is_euclidean() {
        let g = build_scene_graph(&[obj("A", [0.0; 3]), obj("B", [3.0, 4.0, 0.0])], 0.0).unwrap();
        assert_eq!(g.edges[0].distance, 5.0);
    }

    #[test]
    fn relative_speed() {
        let a = obj("A", [0.0; 3]).with_velocity(Vec3::new(1.0, 0.0, 0.0));
        let b = obj("B", [1.0, 0.0, 0.0]).with_velocity(Vec3::new(0.0, 1.0, 0.0));
        let g = build_scene_graph(&[a, b], 0.0).unwrap();
        assert!((g.edges[0].relative_speed - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = build_scene_graph(&[obj("A", [0.0; 3]), obj("A", [1.0, 0.0, 0.0])], 0.0);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn empty_rejected() {
        assert!(build_scene_graph::<f64>(&[], 0.0).is_err());
    }

    fn pair_at(d: f64, t: f64) -> SceneGraph<f64> {
        build_scene_graph(&[obj("A", [0.0; 3]), obj("B", [d, 0.0, 0.0])], t).unwrap()
    }

    #[test]
    fn static_pair_diff() {
        let d = diff_graph(&pair_at(5.0, 0.0), &pair_at(5.0, 1.0)).unwrap();
        let e = &d.edges[0];
        assert_eq!(e.displacement_delta, 0.0);
        assert_eq!(e.relative_velocity, 0.0);
        assert!(!e.approaching);
    }

    #[test]
    fn closing_pair_diff() {
        let d = diff_graph(&pair_at(5.0, 0.0), &pair_at(4.0, 1.0)).unwrap();
        let e = &d.edges[0];
        assert_eq!(e.displacement_delta, -1.0);
        assert_eq!(e.relative_velocity, -1.0);
        assert!(e.approaching);
    }

    #[test]
    fn opening_pair_diff() {
        let d = diff_graph(&pair_at(2.0, 0.0), &pair_at(3.0, 0.5)).unwrap();
        let e = &d.edges[0];
        assert_eq!(e.relative_velocity, 2.0);
        assert!(!e.approaching);
        assert_eq!(d.dt_obs, 0.5);
    }

    #[test]
    fn swapped_snapshots_rejected() {
        assert!(diff_graph(&pair_at(4.0, 1.0), &pair_at(5.0, 0.0)).is_err());
        assert!(diff_graph(&pair_at(4.0, 1.0), &pair_at(5.0, 1.0)).is_err());
    }

    #[test]
    fn node_mismatch_rejected() {
        let other = build_scene_graph(&[obj("A", [0.0; 3]), obj("C", [1.0, 0.0, 0.0])], 1.0).unwrap();
        assert!(diff_graph(&pair_at(1.0, 0.0), &other).is_err());
    }

    #[test]
    fn world_json_has_triples() {
        let w = WorldState::new(0.0, vec![obj("A", [1.0, 2.0, 3.0]).with_radius(0.3)]);
        let s = w.to_json();
        assert!(s.contains("\"position\":[1.0,2.0,3.0]"));
        assert!(s.contains("\"kind\":\"generic\""));
    }

    #[test]
    fn world_validation() {
        let w = WorldState::new(0.0, vec![obj("A", [0.0; 3]).with_mass(0.0)]);
        assert!(w.validate().is_err());
        let w = WorldState::new(-1.0, vec![obj("A", [0.0; 3])]);
        assert!(w.validate().is_err());
    }
}
