//! Explicit-Euler engine, closed-form kinematics and sphere collisions.
//!
//! Gravity acts along -z and only on [`ObjectKind::Projectile`] bodies; every
//! other body moves under its own stored acceleration. The stepping order is
//! position first (with the pre-step velocity), then velocity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scenegraph::{EdgeKey, ObjectKind, ObjectState, WorldState};
use crate::vec3::Vec3;

pub const DEFAULT_DT: f64 = 1e-3;
pub const STANDARD_GRAVITY: f64 = 9.81;
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;
/// Slack allowed on the contact distance for the normal-impulse resolver.
pub const CONTACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"), default, deny_unknown_fields)]
pub struct SimConfig<T> {
    pub dt: T,
    pub gravity: T,
    pub max_steps: u64,
}

impl<T: Scalar> Default for SimConfig<T> {
    fn default() -> Self {
        Self { dt: T::lit(DEFAULT_DT), gravity: T::lit(STANDARD_GRAVITY), max_steps: DEFAULT_MAX_STEPS }
    }
}

impl<T: Scalar> SimConfig<T> {
    pub fn with_dt(mut self, dt: T) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero() && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be > 0"));
        }
        if !(self.gravity >= T::zero()) {
            return Err(Error::invalid("gravity must be >= 0"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be positive"));
        }
        Ok(())
    }

    pub fn gravity_vector(&self) -> Vec3<T> {
        Vec3::new(T::zero(), T::zero(), -self.gravity)
    }

    /// Acceleration the engine applies to `obj`.
    pub fn acceleration_of(&self, obj: &ObjectState<T>) -> Vec3<T> {
        match obj.kind {
            ObjectKind::Projectile => obj.acceleration + self.gravity_vector(),
            _ => obj.acceleration,
        }
    }
}

/// One explicit Euler step using each object's stored acceleration.
pub fn euler_step<T: Scalar>(world: &WorldState<T>, dt: T) -> WorldState<T> {
    euler_step_with(world, dt, |o| o.acceleration)
}

/// Euler step with accelerations supplied by a field, evaluated at the
/// pre-step state.
pub fn euler_step_with<T: Scalar>(
    world: &WorldState<T>,
    dt: T,
    accel: impl Fn(&ObjectState<T>) -> Vec3<T>,
) -> WorldState<T> {
    let mut next = world.clone();
    euler_step_in_place(&mut next, dt, accel);
    next
}

pub fn euler_step_in_place<T: Scalar>(world: &mut WorldState<T>, dt: T, accel: impl Fn(&ObjectState<T>) -> Vec3<T>) {
    for obj in &mut world.objects {
        let a = accel(obj);
        obj.position += obj.velocity * dt;
        obj.velocity += a * dt;
    }
    world.timestamp = world.timestamp + dt;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCondition {
    None,
    /// A projectile crosses z = 0 while descending.
    GroundHit,
    /// Any two spheres touch.
    FirstContact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SimEvent<T> {
    /// Time since the start of the interval at which the stop condition fired.
    pub stop_time: Option<T>,
    /// First sphere contact seen during the interval, with its time.
    pub contact: Option<(EdgeKey, T)>,
    /// Projectile that triggered [`StopCondition::GroundHit`].
    pub ground_hit: Option<String>,
    pub steps: u64,
}

/// Splits `duration` into whole `dt` steps plus a trailing partial step,
/// enforcing the step budget.
pub fn step_plan<T: Scalar>(duration: T, cfg: &SimConfig<T>) -> Result<(u64, T)> {
    if !(duration >= T::zero()) {
        return Err(Error::invalid("duration must be >= 0"));
    }
    cfg.validate()?;
    let ratio = (duration / cfg.dt).as_f64();
    let full = (ratio + 1e-9).floor();
    if !full.is_finite() || full > cfg.max_steps as f64 {
        return Err(Error::StepBudget { required: ratio.ceil() as u64, max_steps: cfg.max_steps });
    }
    let full_steps = full as u64;
    let remainder = duration - cfg.dt * T::lit(full);
    let remainder = if remainder > cfg.dt * T::lit(1e-9) { remainder } else { T::zero() };
    let total = full_steps + u64::from(remainder > T::zero());
    if total > cfg.max_steps {
        return Err(Error::StepBudget { required: total, max_steps: cfg.max_steps });
    }
    Ok((full_steps, remainder))
}

fn first_contact<T: Scalar>(world: &WorldState<T>) -> Option<(usize, usize)> {
    let objs = &world.objects;
    for i in 0..objs.len() {
        for j in i + 1..objs.len() {
            let reach = objs[i].radius + objs[j].radius;
            if reach > T::zero() && objs[i].position.distance(objs[j].position) <= reach {
                return Some((i, j));
            }
        }
    }
    None
}

/// Resolves every touching, closing pair with the normal-impulse resolver.
fn resolve_contacts<T: Scalar>(world: &mut WorldState<T>) {
    let n = world.objects.len();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&world.objects[i], &world.objects[j]);
            let reach = a.radius + b.radius;
            let dp = b.position - a.position;
            if reach > T::zero() && dp.norm() <= reach && dp.dot(b.velocity - a.velocity) < T::zero() {
                if let Ok((va, vb)) = resolve_elastic_normal(a, b) {
                    world.objects[i].velocity = va;
                    world.objects[j].velocity = vb;
                }
            }
        }
    }
}

pub fn simulate_interval<T: Scalar>(
    world: &WorldState<T>,
    duration: T,
    cfg: &SimConfig<T>,
    stop: StopCondition,
) -> Result<(WorldState<T>, SimEvent<T>)> {
    simulate_observed(world, duration, cfg, stop, |_| {})
}

/// [`simulate_interval`] with a callback invoked on every post-step state.
pub fn simulate_observed<T: Scalar>(
    world: &WorldState<T>,
    duration: T,
    cfg: &SimConfig<T>,
    stop: StopCondition,
    mut observe: impl FnMut(&WorldState<T>),
) -> Result<(WorldState<T>, SimEvent<T>)> {
    let (full_steps, remainder) = step_plan(duration, cfg)?;
    let start = world.timestamp;
    let mut state = world.clone();
    let mut event = SimEvent { stop_time: None, contact: None, ground_hit: None, steps: 0 };

    let total = full_steps + u64::from(remainder > T::zero());
    for i in 1..=total {
        let (h, elapsed) = if i <= full_steps {
            (cfg.dt, cfg.dt * T::lit(i as f64))
        } else {
            (remainder, duration)
        };
        euler_step_in_place(&mut state, h, |o| cfg.acceleration_of(o));
        state.timestamp = start + elapsed;
        event.steps = i;

        if let Some((a, b)) = first_contact(&state) {
            if event.contact.is_none() {
                let key = EdgeKey::new(&state.objects[a].id, &state.objects[b].id);
                event.contact = Some((key, elapsed));
            }
            if stop == StopCondition::FirstContact {
                event.stop_time = Some(elapsed);
                observe(&state);
                break;
            }
            resolve_contacts(&mut state);
        }

        observe(&state);

        if stop == StopCondition::GroundHit {
            let hit = state
                .objects
                .iter()
                .find(|o| o.kind == ObjectKind::Projectile && o.position.z <= T::zero() && o.velocity.z < T::zero());
            if let Some(o) = hit {
                event.ground_hit = Some(o.id.clone());
                event.stop_time = Some(elapsed);
                break;
            }
        }
    }
    Ok((state, event))
}

/// Advances a point on a circle of `radius` about the z axis by integrating
/// the phase angle with fixed steps of `dt`. Starts at `(radius, 0, 0)`.
pub fn integrate_circular<T: Scalar>(radius: T, omega: T, duration: T, cfg: &SimConfig<T>) -> Result<Vec3<T>> {
    let (full_steps, remainder) = step_plan(duration, cfg)?;
    let mut theta = T::zero();
    for _ in 0..full_steps {
        theta = theta + omega * cfg.dt;
    }
    theta = theta + omega * remainder;
    Ok(Vec3::new(radius * theta.cos(), radius * theta.sin(), T::zero()))
}

/// Named numeric answer fields in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct KinematicAnswer<T> {
    pub fields: Vec<(String, T)>,
}

impl<T: Scalar> KinematicAnswer<T> {
    fn from_pairs(pairs: impl IntoIterator<Item = (&'static str, T)>) -> Self {
        Self { fields: pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect() }
    }

    pub fn get(&self, name: &str) -> Option<T> {
        self.fields.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(k, _)| k.as_str())
    }
}

pub fn linear_closed_form<T: Scalar>(v0: Vec3<T>, a: Vec3<T>, t: T) -> KinematicAnswer<T> {
    let v = v0 + a * t;
    let d = v0 * t + a * (T::lit(0.5) * t * t);
    KinematicAnswer::from_pairs([
        ("velocity_x", v.x),
        ("velocity_y", v.y),
        ("velocity_z", v.z),
        ("displacement_x", d.x),
        ("displacement_y", d.y),
        ("displacement_z", d.z),
    ])
}

/// Uniform circular motion in the xy-plane starting at `(radius, 0, 0)`.
pub fn circular_closed_form<T: Scalar>(radius: T, omega: T, t: T) -> KinematicAnswer<T> {
    let theta = omega * t;
    KinematicAnswer::from_pairs([
        ("x_B", radius * theta.cos()),
        ("y_B", radius * theta.sin()),
        ("z_B", T::zero()),
    ])
}

/// Launch from the origin over flat ground at z = 0. `range_z` is always 0.
pub fn projectile_closed_form<T: Scalar>(v0: Vec3<T>, gravity: T) -> Result<KinematicAnswer<T>> {
    if !(v0.z > T::zero()) {
        return Err(Error::invalid("projectile needs an upward launch velocity"));
    }
    let two = T::lit(2.0);
    let flight = two * v0.z / gravity;
    Ok(KinematicAnswer::from_pairs([
        ("flight_time", flight),
        ("maximum_height", v0.z * v0.z / (two * gravity)),
        ("range_x", v0.x * flight),
        ("range_y", v0.y * flight),
        ("range_z", T::zero()),
    ]))
}

/// Ballistic position at time `t` with no ground plane.
pub fn ballistic_position<T: Scalar>(v0: Vec3<T>, gravity: T, t: T) -> Vec3<T> {
    Vec3::new(v0.x * t, v0.y * t, v0.z * t - T::lit(0.5) * gravity * t * t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct CollisionReport<T> {
    pub will_collide: bool,
    pub time_of_impact: Option<T>,
    pub post_velocities: Option<(Vec3<T>, Vec3<T>)>,
}

/// Earliest non-negative time at which two linearly moving spheres touch.
pub fn predict_sphere_collision<T: Scalar>(a: &ObjectState<T>, b: &ObjectState<T>) -> CollisionReport<T> {
    let miss = CollisionReport { will_collide: false, time_of_impact: None, post_velocities: None };
    let dp = b.position - a.position;
    let dv = b.velocity - a.velocity;
    let reach = a.radius + b.radius;

    let c = dp.norm_squared() - reach * reach;
    if c <= T::zero() {
        return CollisionReport { will_collide: true, time_of_impact: Some(T::zero()), post_velocities: None };
    }
    let half_b = dp.dot(dv);
    let qa = dv.norm_squared();
    if !(half_b < T::zero()) || !(qa > T::zero()) {
        return miss;
    }
    let disc = half_b * half_b - qa * c;
    if disc < T::zero() {
        return miss;
    }
    // Smaller root of qa t^2 + 2 half_b t + c = 0, written to avoid cancellation.
    let t = c / (-half_b + disc.sqrt());
    CollisionReport { will_collide: true, time_of_impact: Some(t), post_velocities: None }
}

/// One-dimensional elastic exchange applied independently on each axis.
///
/// Exact only for collinear motion; kept because the QA answer keys use it.
pub fn resolve_elastic_componentwise<T: Scalar>(m1: T, v1: Vec3<T>, m2: T, v2: Vec3<T>) -> (Vec3<T>, Vec3<T>) {
    let total = m1 + m2;
    let two = T::lit(2.0);
    let one_d = |u1: T, u2: T| {
        (
            ((m1 - m2) * u1 + two * m2 * u2) / total,
            ((m2 - m1) * u2 + two * m1 * u1) / total,
        )
    };
    let (x1, x2) = one_d(v1.x, v2.x);
    let (y1, y2) = one_d(v1.y, v2.y);
    let (z1, z2) = one_d(v1.z, v2.z);
    (Vec3::new(x1, y1, z1), Vec3::new(x2, y2, z2))
}

/// Elastic exchange along the line of centers; tangential parts unchanged.
pub fn resolve_elastic_normal<T: Scalar>(a: &ObjectState<T>, b: &ObjectState<T>) -> Result<(Vec3<T>, Vec3<T>)> {
    if !(a.mass > T::zero() && b.mass > T::zero()) {
        return Err(Error::invalid("masses must be positive"));
    }
    let dp = b.position - a.position;
    let dist = dp.norm();
    if dist > a.radius + b.radius + T::lit(CONTACT_TOLERANCE) {
        return Err(Error::invalid(format!("`{}` and `{}` are not in contact", a.id, b.id)));
    }
    let Some(n) = dp.normalized() else {
        return Err(Error::DegenerateGeometry(format!("`{}` and `{}` share a center", a.id, b.id)));
    };
    let ua = a.velocity.dot(n);
    let ub = b.velocity.dot(n);
    let total = a.mass + b.mass;
    let two = T::lit(2.0);
    let ua_new = ((a.mass - b.mass) * ua + two * b.mass * ub) / total;
    let ub_new = ((b.mass - a.mass) * ub + two * a.mass * ua) / total;
    Ok((a.velocity + n * (ua_new - ua), b.velocity + n * (ub_new - ub)))
}

/// Reflects a center coordinate off the square walls at ±`half_extent`,
/// negating the normal velocity component. Returns true on a bounce.
pub fn reflect_in_square<T: Scalar>(position: &mut Vec3<T>, velocity: &mut Vec3<T>, half_extent: T) -> bool {
    let mut bounced = false;
    for (p, v) in [(&mut position.x, &mut velocity.x), (&mut position.y, &mut velocity.y)] {
        if *p > half_extent {
            *p = half_extent - (*p - half_extent);
            *v = -v.abs();
            bounced = true;
        } else if *p < -half_extent {
            *p = -half_extent + (-half_extent - *p);
            *v = v.abs();
            bounced = true;
        }
    }
    bounced
}

/// Keeps a controlled body inside the square walls, stopping motion into them.
pub fn clamp_in_square<T: Scalar>(position: &mut Vec3<T>, velocity: &mut Vec3<T>, half_extent: T) {
    for (p, v) in [(&mut position.x, &mut velocity.x), (&mut position.y, &mut velocity.y)] {
        if *p > half_extent {
            *p = half_extent;
            *v = v.min(T::zero());
        } else if *p < -half_extent {
            *p = -half_extent;
            *v = v.max(T::zero());
        }
    }
}
