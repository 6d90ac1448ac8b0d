//! Synthetic kinematics questions with analytic answer keys.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use apex_core::decision::{assemble_prompt, parse_reply_json, DecisionBackend, PromptBundle, TemplateId};
use apex_core::physics::{
    ballistic_position, circular_closed_form, integrate_circular, linear_closed_form, predict_sphere_collision,
    projectile_closed_form, resolve_elastic_componentwise, simulate_interval, simulate_observed, SimConfig, StopCondition,
};
use apex_core::scenegraph::{ObjectKind, ObjectState, WorldState};
use apex_core::{Error, Result, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const DEFAULT_TOLERANCE: f64 = 0.05;
pub const ABSOLUTE_FLOOR: f64 = 0.05;
pub const DEFAULT_COUNT: usize = 25;
pub const COLLISION_RADIUS: f64 = 0.5;
/// Engine look-ahead when deciding whether two spheres meet.
pub const COLLISION_HORIZON: f64 = 20.0;
const MAX_TIME_OF_IMPACT: f64 = 10.0;
const PROJECTILE_HORIZON: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Linear,
    Circular,
    Projectile,
    Collision,
    Multi,
}

impl TaskType {
    pub const ALL: [TaskType; 5] =
        [TaskType::Linear, TaskType::Circular, TaskType::Projectile, TaskType::Collision, TaskType::Multi];

    pub fn name(self) -> &'static str {
        match self {
            TaskType::Linear => "linear",
            TaskType::Circular => "circular",
            TaskType::Projectile => "projectile",
            TaskType::Collision => "collision",
            TaskType::Multi => "multi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn title(self) -> &'static str {
        match self {
            TaskType::Linear => "3D Linear Motion",
            TaskType::Circular => "3D Circular Motion",
            TaskType::Projectile => "3D Projectile Motion",
            TaskType::Collision => "3D Collision",
            TaskType::Multi => "3D Multi-Object Motion",
        }
    }

    fn salt(self) -> u64 {
        match self {
            TaskType::Linear => 0x11,
            TaskType::Circular => 0x22,
            TaskType::Projectile => 0x33,
            TaskType::Collision => 0x44,
            TaskType::Multi => 0x55,
        }
    }

    pub fn answer_schema(self) -> Vec<String> {
        let names: &[&str] = match self {
            TaskType::Linear => {
                &["velocity_x", "velocity_y", "velocity_z", "displacement_x", "displacement_y", "displacement_z"]
            }
            TaskType::Circular => &["x_B", "y_B", "z_B"],
            TaskType::Projectile => &["flight_time", "maximum_height", "range_x", "range_y", "range_z"],
            TaskType::Collision => &["will_collide", "vel_1_x", "vel_1_y", "vel_1_z", "vel_2_x", "vel_2_y", "vel_2_z"],
            TaskType::Multi => &["x_A", "y_A", "z_A", "x_B", "y_B", "z_B", "x_C", "y_C", "z_C"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Expected answer layout as shown to a model, in Python dict notation.
    pub fn answer_json(self) -> String {
        fn floats(names: &[&str]) -> String {
            let body: Vec<_> = names.iter().map(|n| format!("'{n}': 'float'")).collect();
            format!("{{{}}}", body.join(", "))
        }
        match self {
            TaskType::Collision => format!(
                "{{'will_collide': 'bool', 'velocity_1': {}, 'velocity_2': {}}}",
                floats(&["vel_1_x", "vel_1_y", "vel_1_z"]),
                floats(&["vel_2_x", "vel_2_y", "vel_2_z"])
            ),
            TaskType::Multi => format!(
                "{{'pos_A': {}, 'pos_B': {}, 'pos_C': {}}}",
                floats(&["x_A", "y_A", "z_A"]),
                floats(&["x_B", "y_B", "z_B"]),
                floats(&["x_C", "y_C", "z_C"])
            ),
            other => {
                let schema = other.answer_schema();
                floats(&schema.iter().map(String::as_str).collect::<Vec<_>>())
            }
        }
    }

    /// Grading group of a field: per object for multi-object problems.
    fn group_of(self, field: &str) -> Option<char> {
        match self {
            TaskType::Multi => field.chars().last(),
            _ => None,
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: usize,
    pub task_type: TaskType,
    pub parameters: BTreeMap<String, f64>,
    pub question_text: String,
    pub answer_schema: Vec<String>,
}

impl Problem {
    pub fn param(&self, name: &str) -> Result<f64> {
        self.parameters
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("problem {} has no parameter `{name}`", self.id)))
    }

    fn vec3(&self, prefix: &str) -> Result<Vec3<f64>> {
        Ok(Vec3::new(self.param(&format!("{prefix}x"))?, self.param(&format!("{prefix}y"))?, self.param(&format!("{prefix}z"))?))
    }

    /// Builds a problem from parameters, rendering its question text.
    pub fn new(id: usize, task_type: TaskType, parameters: BTreeMap<String, f64>) -> Result<Self> {
        let mut p = Problem { id, task_type, parameters, question_text: String::new(), answer_schema: task_type.answer_schema() };
        p.question_text = question_text(&p)?;
        Ok(p)
    }
}

fn fmt_vec(v: Vec3<f64>) -> String {
    format!("[{}, {}, {}]", v.x, v.y, v.z)
}

fn question_text(p: &Problem) -> Result<String> {
    Ok(match p.task_type {
        TaskType::Linear => format!(
            "An object starts at (0,0,0) with an initial velocity of {} m/s and an acceleration of {} m/s^2. \
             What are its velocity vx, vy, vz and displacement dx, dy, dz after {} seconds?",
            fmt_vec(p.vec3("v")?),
            fmt_vec(p.vec3("a")?),
            p.param("t")?
        ),
        TaskType::Circular => {
            let (r, w) = (p.param("r")?, p.param("omega")?);
            format!(
                "An object moves in circular motion. Radius: {r} meters. Speed: {} m/s. Angular velocity: {w} rad/s. \
                 Time: {} s. Plane: xy-plane. Compute its position (x_B, y_B, z_B), assuming it starts at (r, 0, 0).",
                round_to(r * w, 2),
                p.param("t")?
            )
        }
        TaskType::Projectile => format!(
            "A projectile is launched from (0,0,0) with an initial velocity of {} m/s from x-y plane. \
             Calculate its flight time, maximum height (h), and range (dx, dy, dz).",
            fmt_vec(p.vec3("v")?)
        ),
        TaskType::Collision => format!(
            "Two objects with masses {} kg and {} kg are located at positions: Object 1 Position: {} \
             Object 2 Position: {} The radius of both spheres is {}. They are moving with velocities: \
             Object 1 Velocity: {} m/s Object 2 Velocity: {} m/s Assuming an elastic collision, determine: \
             Will they collide? If they collide, what are their final velocities?",
            p.param("m1")?,
            p.param("m2")?,
            fmt_vec(p.vec3("p1")?),
            fmt_vec(p.vec3("p2")?),
            p.param("radius")?,
            fmt_vec(p.vec3("v1")?),
            fmt_vec(p.vec3("v2")?)
        ),
        TaskType::Multi => format!(
            "We have three objects moving in different types of motion in 3D space:\n\
             1. Object A - Linear Motion: Initial Velocity: {} m/s. Acceleration: {} m/s^2. Time: {} s. \
             Compute the final position (x_A, y_A, z_A), assuming it starts at (0, 0, 0).\n\
             2. Object B - Circular Motion: Radius: {} m. Angular Velocity: {} rad/s. Time: {} s. Rotating in the xy-plane. \
             Compute the position (x_B, y_B, z_B), assuming it starts at (r_B, 0, 0).\n\
             3. Object C - Projectile Motion: Initial Speed: {} m/s. Time: {} s. \
             Compute the position (x_C, y_C, z_C), assuming it starts from (0, 0, 0) in the xy-plane.",
            fmt_vec(p.vec3("A_v")?),
            fmt_vec(p.vec3("A_a")?),
            p.param("A_t")?,
            p.param("B_r")?,
            p.param("B_omega")?,
            p.param("B_t")?,
            fmt_vec(p.vec3("C_v")?),
            p.param("C_t")?
        ),
    })
}

pub fn round_to(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (x * s).round() / s
}

fn draw(rng: &mut ChaCha8Rng, lo: f64, hi: f64, decimals: i32) -> f64 {
    round_to(rng.gen_range(lo..=hi), decimals)
}

fn put_vec(params: &mut BTreeMap<String, f64>, prefix: &str, rng: &mut ChaCha8Rng, lo: f64, hi: f64, decimals: i32) {
    for axis in ["x", "y", "z"] {
        params.insert(format!("{prefix}{axis}"), draw(rng, lo, hi, decimals));
    }
}

fn collision_pair(p: &Problem) -> Result<(ObjectState<f64>, ObjectState<f64>)> {
    let radius = p.param("radius")?;
    let a = ObjectState::at_rest("1", ObjectKind::Generic, p.vec3("p1")?)
        .with_velocity(p.vec3("v1")?)
        .with_mass(p.param("m1")?)
        .with_radius(radius);
    let b = ObjectState::at_rest("2", ObjectKind::Generic, p.vec3("p2")?)
        .with_velocity(p.vec3("v2")?)
        .with_mass(p.param("m2")?)
        .with_radius(radius);
    Ok((a, b))
}

fn sample_params(task: TaskType, index: usize, rng: &mut ChaCha8Rng) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    match task {
        TaskType::Linear => {
            put_vec(&mut m, "v", rng, -25.0, 25.0, 2);
            put_vec(&mut m, "a", rng, -3.0, 3.0, 2);
            m.insert("t".into(), draw(rng, 1.0, 10.0, 2));
        }
        TaskType::Circular => {
            m.insert("r".into(), draw(rng, 1.0, 5.0, 2));
            m.insert("omega".into(), draw(rng, 0.5, 5.0, 2));
            m.insert("t".into(), draw(rng, 1.0, 10.0, 2));
        }
        TaskType::Projectile => {
            m.insert("vx".into(), draw(rng, -25.0, 25.0, 2));
            m.insert("vy".into(), draw(rng, -25.0, 25.0, 2));
            m.insert("vz".into(), draw(rng, 5.01, 25.0, 2));
        }
        TaskType::Multi => {
            put_vec(&mut m, "A_v", rng, -25.0, 25.0, 2);
            put_vec(&mut m, "A_a", rng, -3.0, 3.0, 2);
            m.insert("A_t".into(), draw(rng, 1.0, 10.0, 2));
            m.insert("B_r".into(), draw(rng, 1.0, 5.0, 2));
            m.insert("B_omega".into(), draw(rng, 0.5, 5.0, 2));
            m.insert("B_t".into(), draw(rng, 1.0, 10.0, 2));
            m.insert("C_vx".into(), draw(rng, -25.0, 25.0, 2));
            m.insert("C_vy".into(), draw(rng, -25.0, 25.0, 2));
            m.insert("C_vz".into(), draw(rng, 5.01, 25.0, 2));
            m.insert("C_t".into(), draw(rng, 1.0, 10.0, 2));
        }
        TaskType::Collision => {
            let want = index % 2 == 0;
            for _ in 0..100_000 {
                let mut c = BTreeMap::new();
                c.insert("m1".into(), draw(rng, 1.0, 10.0, 2));
                c.insert("m2".into(), draw(rng, 1.0, 10.0, 2));
                put_vec(&mut c, "p1", rng, -3.0, 3.0, 4);
                put_vec(&mut c, "p2", rng, -3.0, 3.0, 4);
                put_vec(&mut c, "v1", rng, -3.0, 3.0, 3);
                put_vec(&mut c, "v2", rng, -3.0, 3.0, 3);
                c.insert("radius".into(), COLLISION_RADIUS);
                let probe = Problem { id: index, task_type: task, parameters: c, question_text: String::new(), answer_schema: vec![] };
                let (a, b) = collision_pair(&probe)?;
                if a.position.distance(b.position) <= 2.0 * COLLISION_RADIUS {
                    continue;
                }
                let report = predict_sphere_collision(&a, &b);
                let accepted = match report.time_of_impact {
                    Some(t) => want && t <= MAX_TIME_OF_IMPACT,
                    None => !want,
                };
                if accepted {
                    return Ok(probe.parameters);
                }
            }
            return Err(Error::InvalidInput("collision sampler did not converge".into()));
        }
    }
    Ok(m)
}

/// Seeded problem set; identical `(task, n, seed)` gives identical problems.
pub fn generate_problems(task: TaskType, n: usize, seed: u64) -> Result<Vec<Problem>> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (task.salt() << 56));
    (0..n).map(|i| Problem::new(i, task, sample_params(task, i, &mut rng)?)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truth {
    Number(f64),
    Bool(bool),
    /// Any answer is accepted.
    Any,
}

impl Serialize for Truth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Truth::Number(x) => s.serialize_f64(*x),
            Truth::Bool(b) => s.serialize_bool(*b),
            Truth::Any => s.serialize_str("any"),
        }
    }
}

impl<'de> Deserialize<'de> for Truth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::Number(n) => n.as_f64().map(Truth::Number).ok_or_else(|| serde::de::Error::custom("bad number")),
            Value::Bool(b) => Ok(Truth::Bool(b)),
            Value::String(s) if s == "any" => Ok(Truth::Any),
            other => Err(serde::de::Error::custom(format!("unexpected truth value {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyField {
    pub name: String,
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub problem_id: usize,
    pub task_type: TaskType,
    pub fields: Vec<KeyField>,
}

impl AnswerKey {
    pub fn get(&self, name: &str) -> Option<Truth> {
        self.fields.iter().find(|f| f.name == name).map(|f| f.truth)
    }

    /// The key written as an answer map, the form a perfect solver would give.
    pub fn as_answer(&self) -> BTreeMap<String, String> {
        self.fields
            .iter()
            .map(|f| {
                let v = match f.truth {
                    Truth::Number(x) => x.to_string(),
                    Truth::Bool(b) => b.to_string(),
                    Truth::Any => "any".to_string(),
                };
                (f.name.clone(), v)
            })
            .collect()
    }
}

fn numbers(fields: &mut Vec<KeyField>, names: [&str; 3], v: Vec3<f64>) {
    for (n, x) in names.into_iter().zip(v.to_array()) {
        fields.push(KeyField { name: n.into(), truth: Truth::Number(x) });
    }
}

/// Analytic answer key.
pub fn oracle_answer(p: &Problem, gravity: f64) -> Result<AnswerKey> {
    let mut fields = Vec::new();
    match p.task_type {
        TaskType::Linear => {
            for (name, x) in linear_closed_form(p.vec3("v")?, p.vec3("a")?, p.param("t")?).fields {
                fields.push(KeyField { name, truth: Truth::Number(x) });
            }
        }
        TaskType::Circular => {
            for (name, x) in circular_closed_form(p.param("r")?, p.param("omega")?, p.param("t")?).fields {
                fields.push(KeyField { name, truth: Truth::Number(x) });
            }
        }
        TaskType::Projectile => {
            for (name, x) in projectile_closed_form(p.vec3("v")?, gravity)?.fields {
                let truth = if name == "range_z" { Truth::Any } else { Truth::Number(x) };
                fields.push(KeyField { name, truth });
            }
        }
        TaskType::Collision => {
            let (a, b) = collision_pair(p)?;
            let report = predict_sphere_collision(&a, &b);
            let (v1, v2) = if report.will_collide {
                resolve_elastic_componentwise(a.mass, a.velocity, b.mass, b.velocity)
            } else {
                (a.velocity, b.velocity)
            };
            fields.push(KeyField { name: "will_collide".into(), truth: Truth::Bool(report.will_collide) });
            numbers(&mut fields, ["vel_1_x", "vel_1_y", "vel_1_z"], v1);
            numbers(&mut fields, ["vel_2_x", "vel_2_y", "vel_2_z"], v2);
        }
        TaskType::Multi => {
            let a = linear_closed_form(p.vec3("A_v")?, p.vec3("A_a")?, p.param("A_t")?);
            let d = |n: &str| a.get(n).unwrap_or_default();
            numbers(&mut fields, ["x_A", "y_A", "z_A"], Vec3::new(d("displacement_x"), d("displacement_y"), d("displacement_z")));
            for (name, x) in circular_closed_form(p.param("B_r")?, p.param("B_omega")?, p.param("B_t")?).fields {
                fields.push(KeyField { name, truth: Truth::Number(x) });
            }
            let c = ballistic_position(p.vec3("C_v")?, gravity, p.param("C_t")?);
            numbers(&mut fields, ["x_C", "y_C", "z_C"], c);
            if let Some(f) = fields.iter_mut().find(|f| f.name == "z_C") {
                f.truth = Truth::Any;
            }
        }
    }
    Ok(AnswerKey { problem_id: p.id, task_type: p.task_type, fields })
}

pub type Answer = BTreeMap<String, String>;

fn put_vec_answer(out: &mut Answer, names: [&str; 3], v: Vec3<f64>) {
    for (n, x) in names.into_iter().zip(v.to_array()) {
        out.insert(n.into(), x.to_string());
    }
}

fn single(id: &str, kind: ObjectKind, v: Vec3<f64>, a: Vec3<f64>) -> WorldState<f64> {
    WorldState::new(0.0, vec![ObjectState::at_rest(id, kind, Vec3::zero()).with_velocity(v).with_acceleration(a)])
}

fn linear_sim(v: Vec3<f64>, a: Vec3<f64>, t: f64, sim: &SimConfig<f64>) -> Result<ObjectState<f64>> {
    let (end, _) = simulate_interval(&single("A", ObjectKind::Generic, v, a), t, sim, StopCondition::None)?;
    Ok(end.objects[0].clone())
}

/// Answers a problem by forward simulation at `sim.dt`. Returns the answer
/// map and the engine's wall-clock time in seconds.
pub fn engine_answer(p: &Problem, sim: &SimConfig<f64>) -> Result<(Answer, f64)> {
    let start = Instant::now();
    let mut out = Answer::new();
    match p.task_type {
        TaskType::Linear => {
            let o = linear_sim(p.vec3("v")?, p.vec3("a")?, p.param("t")?, sim)?;
            put_vec_answer(&mut out, ["velocity_x", "velocity_y", "velocity_z"], o.velocity);
            put_vec_answer(&mut out, ["displacement_x", "displacement_y", "displacement_z"], o.position);
        }
        TaskType::Circular => {
            let pos = integrate_circular(p.param("r")?, p.param("omega")?, p.param("t")?, sim)?;
            put_vec_answer(&mut out, ["x_B", "y_B", "z_B"], pos);
        }
        TaskType::Projectile => {
            let world = single("P", ObjectKind::Projectile, p.vec3("v")?, Vec3::zero());
            let mut peak = 0.0f64;
            let (end, ev) = simulate_observed(&world, PROJECTILE_HORIZON, sim, StopCondition::GroundHit, |w| {
                peak = peak.max(w.objects[0].position.z);
            })?;
            let flight = ev
                .stop_time
                .ok_or_else(|| Error::InvalidInput(format!("projectile {} never landed", p.id)))?;
            let pos = end.objects[0].position;
            out.insert("flight_time".into(), flight.to_string());
            out.insert("maximum_height".into(), peak.to_string());
            put_vec_answer(&mut out, ["range_x", "range_y", "range_z"], pos);
        }
        TaskType::Collision => {
            let (a, b) = collision_pair(p)?;
            let world = WorldState::new(0.0, vec![a.clone(), b.clone()]);
            let (_, ev) = simulate_interval(&world, COLLISION_HORIZON, sim, StopCondition::FirstContact)?;
            let hit = ev.contact.is_some();
            let (v1, v2) = if hit {
                resolve_elastic_componentwise(a.mass, a.velocity, b.mass, b.velocity)
            } else {
                (a.velocity, b.velocity)
            };
            out.insert("will_collide".into(), hit.to_string());
            put_vec_answer(&mut out, ["vel_1_x", "vel_1_y", "vel_1_z"], v1);
            put_vec_answer(&mut out, ["vel_2_x", "vel_2_y", "vel_2_z"], v2);
        }
        TaskType::Multi => {
            let a = linear_sim(p.vec3("A_v")?, p.vec3("A_a")?, p.param("A_t")?, sim)?;
            put_vec_answer(&mut out, ["x_A", "y_A", "z_A"], a.position);
            let b = integrate_circular(p.param("B_r")?, p.param("B_omega")?, p.param("B_t")?, sim)?;
            put_vec_answer(&mut out, ["x_B", "y_B", "z_B"], b);
            let world = single("C", ObjectKind::Projectile, p.vec3("C_v")?, Vec3::zero());
            let (end, _) = simulate_interval(&world, p.param("C_t")?, sim, StopCondition::None)?;
            put_vec_answer(&mut out, ["x_C", "y_C", "z_C"], end.objects[0].position);
        }
    }
    Ok((out, start.elapsed().as_secs_f64()))
}

/// Engine predictions as the JSON block injected into the question prompt.
pub fn engine_block(answer: &Answer) -> String {
    let obj: serde_json::Map<String, Value> = answer
        .iter()
        .map(|(k, v)| {
            let val = match v.as_str() {
                "true" => Value::Bool(true),
                "false" => Value::Bool(false),
                s => s
                    .parse::<f64>()
                    .ok()
                    .and_then(|x| serde_json::Number::from_f64(round_to(x, 4)))
                    .map_or_else(|| Value::String(s.to_owned()), Value::Number),
            };
            (k.clone(), val)
        })
        .collect();
    Value::Object(obj).to_string()
}

pub fn question_prompt(p: &Problem, engine: &str) -> Result<PromptBundle> {
    let ctx: BTreeMap<String, String> = [
        ("question".to_string(), p.question_text.clone()),
        ("answer_json".to_string(), p.task_type.answer_json()),
    ]
    .into_iter()
    .collect();
    assemble_prompt(TemplateId::Physqa, &ctx, "", engine)
}

fn flatten(v: &Value, out: &mut Answer) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                match x {
                    Value::Object(_) => flatten(x, out),
                    Value::String(s) => {
                        out.insert(k.clone(), s.clone());
                    }
                    other => {
                        out.insert(k.clone(), other.to_string());
                    }
                }
            }
        }
        Value::String(s) => {
            if let Ok(inner) = parse_loose(s) {
                flatten(&inner, out);
            }
        }
        _ => {}
    }
}

fn parse_loose(text: &str) -> Result<Value> {
    parse_reply_json(text).or_else(|_| parse_reply_json(&text.replace('\'', "\"")))
}

/// Reads a model reply into a flat field map. Nested groups such as
/// `pos_A` and a top-level `answer` wrapper are unwrapped.
pub fn parse_model_answer(text: &str) -> Result<Answer> {
    let v = parse_loose(text)?;
    let body = match v.get("answer") {
        Some(inner) => inner.clone(),
        None => v,
    };
    let mut out = Answer::new();
    flatten(&body, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrade {
    pub name: String,
    pub answer: Option<String>,
    pub valid: bool,
    pub pass: bool,
    pub squared_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeRecord {
    pub problem_id: usize,
    pub task_type: TaskType,
    pub fields: Vec<FieldGrade>,
    pub fully_correct: bool,
    /// Pass flags of the graded units: one per problem, or one per object
    /// for multi-object problems.
    pub units: Vec<bool>,
    /// Share of gradable fields holding a parseable value, in percent.
    pub validity: f64,
    pub engine_wallclock: f64,
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

/// A field passes iff it parses and `|value - truth| <= max(tol*|truth|, 0.05)`.
pub fn grade_response(answer: &Answer, key: &AnswerKey, tolerance: f64) -> GradeRecord {
    let mut fields = Vec::with_capacity(key.fields.len());
    let (mut gradable, mut valid_count) = (0usize, 0usize);
    for kf in &key.fields {
        let given = answer.get(&kf.name).cloned();
        let grade = match kf.truth {
            Truth::Any => FieldGrade { name: kf.name.clone(), answer: given, valid: true, pass: true, squared_error: None },
            Truth::Number(t) => {
                gradable += 1;
                match given.as_deref().and_then(parse_number) {
                    Some(v) => {
                        valid_count += 1;
                        let pass = (v - t).abs() <= (tolerance * t.abs()).max(ABSOLUTE_FLOOR);
                        FieldGrade { name: kf.name.clone(), answer: given, valid: true, pass, squared_error: Some((v - t).powi(2)) }
                    }
                    None => FieldGrade { name: kf.name.clone(), answer: given, valid: false, pass: false, squared_error: None },
                }
            }
            Truth::Bool(t) => {
                gradable += 1;
                match given.as_deref().and_then(parse_bool) {
                    Some(v) => {
                        valid_count += 1;
                        FieldGrade { name: kf.name.clone(), answer: given, valid: true, pass: v == t, squared_error: None }
                    }
                    None => FieldGrade { name: kf.name.clone(), answer: given, valid: false, pass: false, squared_error: None },
                }
            }
        };
        fields.push(grade);
    }
    let fully_correct = fields.iter().all(|f| f.pass);
    let mut groups: BTreeMap<char, bool> = BTreeMap::new();
    for f in &fields {
        if let Some(g) = key.task_type.group_of(&f.name) {
            *groups.entry(g).or_insert(true) &= f.pass;
        }
    }
    let units = if groups.is_empty() { vec![fully_correct] } else { groups.into_values().collect() };
    let validity = if gradable == 0 { 100.0 } else { 100.0 * valid_count as f64 / gradable as f64 };
    GradeRecord { problem_id: key.problem_id, task_type: key.task_type, fields, fully_correct, units, validity, engine_wallclock: 0.0 }
}

/// Record for an answer that could not be obtained at all.
pub fn failed_record(key: &AnswerKey) -> GradeRecord {
    grade_response(&Answer::new(), key, DEFAULT_TOLERANCE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub count: usize,
    /// Percent of passing units.
    pub accuracy: f64,
    /// Mean squared error over parseable numeric fields; absent when none parsed.
    pub mse: Option<f64>,
    pub numerical_validity: f64,
    pub mean_duration_wallclock: f64,
}

pub fn aggregate_suite(records: &[GradeRecord]) -> Result<SuiteMetrics> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to aggregate".into()));
    }
    let units: Vec<bool> = records.iter().flat_map(|r| r.units.iter().copied()).collect();
    let passed = units.iter().filter(|u| **u).count();
    let errors: Vec<f64> = records.iter().flat_map(|r| r.fields.iter().filter_map(|f| f.squared_error)).collect();
    let n = records.len() as f64;
    Ok(SuiteMetrics {
        count: records.len(),
        accuracy: 100.0 * passed as f64 / units.len() as f64,
        mse: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        numerical_validity: records.iter().map(|r| r.validity).sum::<f64>() / n,
        mean_duration_wallclock: records.iter().map(|r| r.engine_wallclock).sum::<f64>() / n,
    })
}

/// One answered and graded problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRun {
    pub record: GradeRecord,
    pub raw_text: Option<String>,
    /// Backend failure text when no reply was obtained.
    pub error: Option<String>,
}

/// Answers `p` with the engine alone (`backend` = `None`) or by asking a
/// decision backend with the engine's predictions in the prompt, then
/// grades against the analytic key.
pub fn answer_problem(
    p: &Problem,
    sim: &SimConfig<f64>,
    backend: Option<&mut dyn DecisionBackend>,
    tolerance: f64,
) -> Result<ProblemRun> {
    let key = oracle_answer(p, sim.gravity)?;
    let (engine, secs) = engine_answer(p, sim)?;
    let Some(backend) = backend else {
        let mut record = grade_response(&engine, &key, tolerance);
        record.engine_wallclock = secs;
        return Ok(ProblemRun { record, raw_text: None, error: None });
    };
    let bundle = question_prompt(p, &engine_block(&engine))?;
    let mut run = match backend.respond(&bundle, &[]) {
        Ok(text) => {
            let record = match parse_model_answer(&text) {
                Ok(ans) => grade_response(&ans, &key, tolerance),
                Err(_) => failed_record(&key),
            };
            ProblemRun { record, raw_text: Some(text), error: None }
        }
        Err(e) => ProblemRun { record: failed_record(&key), raw_text: None, error: Some(e.to_string()) },
    };
    run.record.engine_wallclock = secs;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use apex_core::physics::STANDARD_GRAVITY;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn number(key: &AnswerKey, name: &str) -> f64 {
        match key.get(name) {
            Some(Truth::Number(x)) => x,
            other => panic!("{name}: {other:?}"),
        }
    }

    #[test]
    fn linear_worked_example() {
        let p = Problem::new(
            0,
            TaskType::Linear,
            params(&[("vx", 13.15), ("vy", 1.48), ("vz", 6.23), ("ax", -2.77), ("ay", 2.36), ("az", 1.77), ("t", 9.03)]),
        )
        .unwrap();
        assert!(p.question_text.contains("[13.15, 1.48, 6.23] m/s"));
        let key = oracle_answer(&p, STANDARD_GRAVITY).unwrap();
        for (name, want) in [
            ("velocity_x", -11.86),
            ("velocity_y", 22.79),
            ("velocity_z", 22.21),
            ("displacement_x", 5.81),
            ("displacement_y", 109.58),
            ("displacement_z", 128.42),
        ] {
            assert!((number(&key, name) - want).abs() <= 0.01, "{name}");
        }
    }

    #[test]
    fn projectile_range_z_is_any() {
        let p = Problem::new(0, TaskType::Projectile, params(&[("vx", 7.68), ("vy", 18.83), ("vz", 11.81)])).unwrap();
        let key = oracle_answer(&p, STANDARD_GRAVITY).unwrap();
        assert_eq!(key.get("range_z"), Some(Truth::Any));
        assert!((number(&key, "flight_time") - 2.41).abs() <= 0.01);
    }

    #[test]
    fn zero_motion_gives_zero_key() {
        let p = Problem::new(
            0,
            TaskType::Linear,
            params(&[("vx", 0.0), ("vy", 0.0), ("vz", 0.0), ("ax", 0.0), ("ay", 0.0), ("az", 0.0), ("t", 3.0)]),
        )
        .unwrap();
        let key = oracle_answer(&p, STANDARD_GRAVITY).unwrap();
        assert!(key.fields.iter().all(|f| f.truth == Truth::Number(0.0)));
    }

    fn scalar_key(truths: &[f64]) -> AnswerKey {
        AnswerKey {
            problem_id: 0,
            task_type: TaskType::Linear,
            fields: truths.iter().enumerate().map(|(i, t)| KeyField { name: format!("f{i}"), truth: Truth::Number(*t) }).collect(),
        }
    }

    fn answers(values: &[&str]) -> Answer {
        values.iter().enumerate().map(|(i, v)| (format!("f{i}"), v.to_string())).collect()
    }

    #[test]
    fn five_percent_boundary() {
        assert!(grade_response(&answers(&["104"]), &scalar_key(&[100.0]), 0.05).fully_correct);
        assert!(!grade_response(&answers(&["106"]), &scalar_key(&[100.0]), 0.05).fully_correct);
        assert!(grade_response(&answers(&["0.04"]), &scalar_key(&[0.0]), 0.05).fully_correct);
    }

    #[test]
    fn mse_is_mean_of_squared_errors() {
        let r = grade_response(&answers(&["1", "4"]), &scalar_key(&[1.0, 2.0]), 0.05);
        assert_eq!(aggregate_suite(&[r]).unwrap().mse, Some(2.0));
    }

    #[test]
    fn unparseable_answer_is_invalid() {
        let r = grade_response(&answers(&["N/A", "2"]), &scalar_key(&[1.0, 2.0]), 0.05);
        assert!(!r.fully_correct);
        assert_eq!(r.validity, 50.0);
        assert!(!r.fields[0].valid);
    }

    #[test]
    fn aggregate_counts_fully_correct() {
        let ok = grade_response(&answers(&["1"]), &scalar_key(&[1.0]), 0.05);
        let bad = grade_response(&answers(&["9"]), &scalar_key(&[1.0]), 0.05);
        let m = aggregate_suite(&[ok.clone(), bad, ok.clone(), ok]).unwrap();
        assert_eq!(m.accuracy, 75.0);
        assert_eq!(m.numerical_validity, 100.0);
        assert!(aggregate_suite(&[]).is_err());
    }

    #[test]
    fn nested_replies_flatten() {
        let text = r#"{"reasoning": "x", "answer": {"pos_A": {"x_A": "1.5", "y_A": 2}, "pos_B": {"x_B": "0"}}}"#;
        let a = parse_model_answer(text).unwrap();
        assert_eq!(a["x_A"], "1.5");
        assert_eq!(a["y_A"], "2");
        assert_eq!(a["x_B"], "0");
        let py = "{'will_collide': 'true', 'velocity_1': {'vel_1_x': '-0.7'}}";
        let a = parse_model_answer(py).unwrap();
        assert_eq!(a["will_collide"], "true");
        assert_eq!(a["vel_1_x"], "-0.7");
        let stringly = r#"{"reasoning": "r", "answer": "{\"x_B\": 1.0}"}"#;
        assert_eq!(parse_model_answer(stringly).unwrap()["x_B"], "1.0");
    }

    #[test]
    fn multi_is_graded_per_object() {
        let p = generate_problems(TaskType::Multi, 1, 3).unwrap().remove(0);
        let key = oracle_answer(&p, STANDARD_GRAVITY).unwrap();
        let mut a = key.as_answer();
        a.insert("x_B".into(), "1e9".into());
        let r = grade_response(&a, &key, 0.05);
        assert_eq!(r.units, vec![true, false, true]);
        assert!(!r.fully_correct);
    }

    #[test]
    fn answer_json_layouts() {
        assert_eq!(TaskType::Circular.answer_json(), "{'x_B': 'float', 'y_B': 'float', 'z_B': 'float'}");
        assert!(TaskType::Collision.answer_json().starts_with("{'will_collide': 'bool', 'velocity_1': {'vel_1_x': 'float'"));
        assert!(TaskType::Multi.answer_json().contains("'pos_C': {'x_C': 'float', 'y_C': 'float', 'z_C': 'float'}"));
    }

    #[test]
    fn question_prompt_embeds_engine_block() {
        let p = generate_problems(TaskType::Circular, 1, 1).unwrap().remove(0);
        let (ans, _) = engine_answer(&p, &SimConfig::default()).unwrap();
        let bundle = question_prompt(&p, &engine_block(&ans)).unwrap();
        assert!(bundle.user.contains("The external physical engine predictions: {\"x_B\":"));
        assert!(bundle.user.contains(&p.question_text));
    }
}
