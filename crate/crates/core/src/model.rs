//! Robot description loading and leg kinematics.
//!
//! The robot is described in a deliberately small XML dialect: a `mujoco`
//! root, one `worldbody`, one seat `body` carrying a box geom plus optional
//! massless marker spheres (the backrest contact points), and exactly three
//! hip bodies each holding two perpendicular hinge `joint`s and one foot
//! sphere. Anything outside that subset — unknown elements, unknown
//! attributes, text content, other geom or joint types — is rejected with a
//! line/column-annotated error rather than ignored.
//!
//! Servo commands are degrees with 90° at the neutral (vertical-leg) center;
//! joint angles are radians with 0 at neutral. The two live in lockstep via
//! `φ_j = σ_j · (θ_j − 90°) · π/180` with a per-joint sign map `σ` that
//! defaults to +1 everywhere.

use crate::geom::{axis_angle_rotate, Vec3};
use thiserror::Error;

/// Joint angles in radians, one per servo index, 0 = vertical leg.
pub type JointAngles = [f64; 6];

/// Servo command angles in degrees, 90 = vertical leg.
pub type ServoDegrees = [f64; 6];

/// Maximum element nesting the parser accepts.
const MAX_DEPTH: usize = 16;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}:{line}:{col}: {msg}")]
    Parse { path: String, line: u32, col: u32, msg: String },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ── Model data ────────────────────────────────────────────────────────────

/// One two-axis gimbal hip.
#[derive(Debug, Clone)]
pub struct HipSpec {
    pub name: String,
    /// Attachment point in the seat (body) frame, m.
    pub pos: Vec3,
    /// Axis of the first (outer) hinge, applied second in the kinematic chain.
    pub axis1: Vec3,
    /// Axis of the second (inner) hinge, applied first.
    pub axis2: Vec3,
    /// Hip-to-foot distance along the leg, m.
    pub leg_length: f64,
    /// Servo indices driving (axis1, axis2).
    pub joints: (usize, usize),
}

/// Parsed robot description.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub name: String,
    /// Seat box half-extents, m.
    pub seat_half_extents: Vec3,
    /// Mass of the seat body (backrest included), kg.
    pub seat_mass: f64,
    /// Mass of each point foot, kg.
    pub foot_mass: f64,
    /// Backrest contact points in the seat frame, m.
    pub backrest_points: Vec<Vec3>,
    pub hips: [HipSpec; 3],
    /// Servo→joint sign map σ, +1 or −1 per joint.
    pub joint_signs: [f64; 6],
    /// Joint limits as (min, max) degrees of deviation from the 90° center.
    pub joint_range_deg: [(f64, f64); 6],
}

impl RobotModel {
    /// The description bundled with the repository (`models/chair.chair.xml`).
    pub fn builtin() -> RobotModel {
        parse_model(
            include_str!("../../../models/chair.chair.xml"),
            "models/chair.chair.xml",
        )
        .expect("bundled model must parse")
    }

    /// Map servo command degrees to joint radians, clamping each joint to its
    /// range. The boolean mask flags which joints were clamped.
    pub fn servo_to_joint(&self, servo: &ServoDegrees) -> (JointAngles, [bool; 6]) {
        let mut out = [0.0; 6];
        let mut clamped = [false; 6];
        for j in 0..6 {
            let (lo, hi) = self.joint_range_deg[j];
            let dev = self.joint_signs[j] * (servo[j] - 90.0);
            let (lo, hi) = if self.joint_signs[j] >= 0.0 { (lo, hi) } else { (-hi, -lo) };
            let held = dev.clamp(lo, hi);
            clamped[j] = held != dev;
            out[j] = held.to_radians();
        }
        (out, clamped)
    }

    /// Inverse of [`servo_to_joint`](Self::servo_to_joint) for in-range angles.
    pub fn joint_to_servo(&self, joints: &JointAngles) -> ServoDegrees {
        let mut out = [0.0; 6];
        for j in 0..6 {
            out[j] = 90.0 + self.joint_signs[j] * joints[j].to_degrees();
        }
        out
    }

    /// Clamp RL-space joint angles (radians) to the joint ranges.
    pub fn clamp_joints(&self, joints: &JointAngles) -> JointAngles {
        let mut out = *joints;
        for j in 0..6 {
            let (lo, hi) = self.joint_range_deg[j];
            out[j] = out[j].clamp(lo.to_radians(), hi.to_radians());
        }
        out
    }

    /// Body-frame position of one foot:
    /// `hip + R(axis1, φ_a) · R(axis2, φ_b) · (0, 0, −leg_length)`.
    pub fn fk_foot(&self, hip_idx: usize, joints: &JointAngles) -> Vec3 {
        let hip = &self.hips[hip_idx];
        let leg = Vec3::new(0.0, 0.0, -hip.leg_length);
        let inner = axis_angle_rotate(hip.axis2, joints[hip.joints.1], leg);
        hip.pos + axis_angle_rotate(hip.axis1, joints[hip.joints.0], inner)
    }

    /// Body-frame positions of all three feet.
    pub fn fk_all(&self, joints: &JointAngles) -> [Vec3; 3] {
        [self.fk_foot(0, joints), self.fk_foot(1, joints), self.fk_foot(2, joints)]
    }
}

/// Read and validate a robot description file.
pub fn load_model(path: &str) -> Result<RobotModel, ModelError> {
    let src = std::fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.to_string(), source })?;
    parse_model(&src, path)
}

/// Parse a robot description from a string; `path` only labels errors.
pub fn parse_model(src: &str, path: &str) -> Result<RobotModel, ModelError> {
    let root = Parser::new(src, path).parse_document()?;
    validate(&root, path)
}

// ── XML subset parser ─────────────────────────────────────────────────────

#[derive(Debug)]
struct Attr {
    name: String,
    value: String,
    line: u32,
    col: u32,
}

#[derive(Debug)]
struct Element {
    name: String,
    attrs: Vec<Attr>,
    children: Vec<Element>,
    line: u32,
    col: u32,
}

impl Element {
    fn attr(&self, name: &str) -> Option<&Attr> {
        self.attrs.iter().find(|a| a.name == name)
    }
}

struct Parser<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
    path: &'a str,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, path: &'a str) -> Self {
        Parser { chars: src.chars().peekable(), line: 1, col: 1, path }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ModelError> {
        Err(ModelError::Parse {
            path: self.path.to_string(),
            line: self.line,
            col: self.col,
            msg: msg.into(),
        })
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next();
        match c {
            Some('\n') => {
                self.line += 1;
                self.col = 1;
            }
            Some(_) => self.col += 1,
            None => {}
        }
        c
    }

    fn expect(&mut self, want: char) -> Result<(), ModelError> {
        match self.bump() {
            Some(c) if c == want => Ok(()),
            Some(c) => self.err(format!("expected `{want}`, found `{c}`")),
            None => self.err(format!("expected `{want}`, found end of input")),
        }
    }

    fn eat_literal(&mut self, lit: &str) -> Result<(), ModelError> {
        for want in lit.chars() {
            self.expect(want)?;
        }
        Ok(())
    }

    /// Skip whitespace, comments, and (at most once, at the top) the
    /// `<?xml ...?>` declaration.
    fn skip_trivia(&mut self, allow_decl: bool) -> Result<(), ModelError> {
        let mut decl_ok = allow_decl;
        loop {
            while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
                self.bump();
            }
            if self.peek() != Some('<') {
                return Ok(());
            }
            // Look ahead one char without a real lookahead buffer: clone the
            // iterator (cheap for `Chars`).
            let mut ahead = self.chars.clone();
            ahead.next();
            match ahead.next() {
                Some('!') => {
                    self.eat_literal("<!--")?;
                    loop {
                        match self.bump() {
                            None => return self.err("unterminated comment"),
                            Some('-') => {
                                let mut a = self.chars.clone();
                                if a.next() == Some('-') && a.next() == Some('>') {
                                    self.bump();
                                    self.bump();
                                    break;
                                }
                            }
                            Some(_) => {}
                        }
                    }
                }
                Some('?') => {
                    if !decl_ok {
                        return self.err("unexpected processing instruction");
                    }
                    decl_ok = false;
                    loop {
                        match self.bump() {
                            None => return self.err("unterminated declaration"),
                            Some('?') if self.peek() == Some('>') => {
                                self.bump();
                                break;
                            }
                            Some(_) => {}
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn name_char(c: char) -> bool {
        c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == ':'
    }

    fn parse_name(&mut self) -> Result<String, ModelError> {
        let mut s = String::new();
        while matches!(self.peek(), Some(c) if Self::name_char(c)) {
            s.push(self.bump().unwrap());
        }
        if s.is_empty() {
            return self.err("expected a name");
        }
        Ok(s)
    }

    fn parse_document(&mut self) -> Result<Element, ModelError> {
        self.skip_trivia(true)?;
        if self.peek().is_none() {
            return self.err("empty document");
        }
        let root = self.parse_element(1)?;
        self.skip_trivia(false)?;
        if self.peek().is_some() {
            return self.err("content after the root element");
        }
        Ok(root)
    }

    fn parse_element(&mut self, depth: usize) -> Result<Element, ModelError> {
        if depth > MAX_DEPTH {
            return self.err(format!("element nesting exceeds the depth limit of {MAX_DEPTH}"));
        }
        let (line, col) = (self.line, self.col);
        self.expect('<')?;
        let name = self.parse_name()?;
        let mut el = Element { name, attrs: Vec::new(), children: Vec::new(), line, col };

        loop {
            while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
                self.bump();
            }
            match self.peek() {
                Some('/') => {
                    self.bump();
                    self.expect('>')?;
                    return Ok(el); // self-closing
                }
                Some('>') => {
                    self.bump();
                    break;
                }
                Some(c) if Self::name_char(c) => {
                    let (aline, acol) = (self.line, self.col);
                    let aname = self.parse_name()?;
                    self.expect('=')?;
                    self.expect('"')?;
                    let mut value = String::new();
                    loop {
                        match self.bump() {
                            None => return self.err("unterminated attribute value"),
                            Some('"') => break,
                            Some('&') => return self.err("entity references are not supported"),
                            Some('<') => return self.err("`<` inside attribute value"),
                            Some(ch) => value.push(ch),
                        }
                    }
                    if el.attrs.iter().any(|a| a.name == aname) {
                        return self.err(format!("duplicate attribute `{aname}`"));
                    }
                    el.attrs.push(Attr { name: aname, value, line: aline, col: acol });
                }
                Some(c) => return self.err(format!("unexpected `{c}` in element tag")),
                None => return self.err("unexpected end of input inside element tag"),
            }
        }

        // Children until the matching close tag. Only whitespace text allowed.
        loop {
            match self.peek() {
                None => return self.err(format!("missing `</{}>`", el.name)),
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some('<') => {
                    let mut ahead = self.chars.clone();
                    ahead.next();
                    match ahead.next() {
                        Some('/') => {
                            self.bump();
                            self.bump();
                            let close = self.parse_name()?;
                            if close != el.name {
                                return self
                                    .err(format!("`</{close}>` does not match `<{}>`", el.name));
                            }
                            while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
                                self.bump();
                            }
                            self.expect('>')?;
                            return Ok(el);
                        }
                        Some('!') => self.skip_trivia(false)?,
                        _ => el.children.push(self.parse_element(depth + 1)?),
                    }
                }
                Some(_) => return self.err("text content is not supported"),
            }
        }
    }
}

// ── Validation ────────────────────────────────────────────────────────────

struct Validator<'a> {
    path: &'a str,
}

impl<'a> Validator<'a> {
    fn at<T>(&self, line: u32, col: u32, msg: impl Into<String>) -> Result<T, ModelError> {
        Err(ModelError::Parse {
            path: self.path.to_string(),
            line,
            col,
            msg: msg.into(),
        })
    }

    fn check_element(
        &self,
        el: &Element,
        want: &str,
        allowed_attrs: &[&str],
    ) -> Result<(), ModelError> {
        if el.name != want {
            return self.at(el.line, el.col, format!("expected `<{want}>`, found `<{}>`", el.name));
        }
        for a in &el.attrs {
            if !allowed_attrs.contains(&a.name.as_str()) {
                return self.at(
                    a.line,
                    a.col,
                    format!("unknown attribute `{}` on `<{}>`", a.name, el.name),
                );
            }
        }
        Ok(())
    }

    fn known_child(&self, el: &Element, allowed: &[&str]) -> Result<(), ModelError> {
        if !allowed.contains(&el.name.as_str()) {
            return self.at(el.line, el.col, format!("unknown element `<{}>`", el.name));
        }
        Ok(())
    }

    fn require_attr<'e>(&self, el: &'e Element, name: &str) -> Result<&'e Attr, ModelError> {
        el.attr(name).ok_or_else(|| ModelError::Parse {
            path: self.path.to_string(),
            line: el.line,
            col: el.col,
            msg: format!("`<{}>` is missing attribute `{name}`", el.name),
        })
    }

    fn floats(&self, a: &Attr, n: usize) -> Result<Vec<f64>, ModelError> {
        let parts: Result<Vec<f64>, _> =
            a.value.split_whitespace().map(str::parse::<f64>).collect();
        match parts {
            Ok(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => Ok(v),
            _ => self.at(
                a.line,
                a.col,
                format!("attribute `{}` must be {n} finite number(s), got `{}`", a.name, a.value),
            ),
        }
    }

    fn vec3(&self, a: &Attr) -> Result<Vec3, ModelError> {
        let v = self.floats(a, 3)?;
        Ok(Vec3::new(v[0], v[1], v[2]))
    }

    fn scalar(&self, a: &Attr) -> Result<f64, ModelError> {
        Ok(self.floats(a, 1)?[0])
    }
}

fn validate(root: &Element, path: &str) -> Result<RobotModel, ModelError> {
    let v = Validator { path };

    v.check_element(root, "mujoco", &["model"])?;
    let name = v.require_attr(root, "model")?.value.clone();
    if root.children.len() != 1 {
        return v.at(root.line, root.col, "`<mujoco>` must contain exactly one `<worldbody>`");
    }
    let world = &root.children[0];
    v.check_element(world, "worldbody", &[])?;
    if world.children.len() != 1 {
        return v.at(world.line, world.col, "`<worldbody>` must contain exactly one seat `<body>`");
    }

    let seat = &world.children[0];
    v.check_element(seat, "body", &["name", "pos"])?;
    let seat_pos = v.vec3(v.require_attr(seat, "pos")?)?;
    if seat_pos != Vec3::ZERO {
        return v.at(seat.line, seat.col, "the seat body must sit at pos=\"0 0 0\"");
    }

    let mut seat_box: Option<(Vec3, f64)> = None;
    let mut backrest_points = Vec::new();
    let mut hips: Vec<HipSpec> = Vec::new();
    let mut foot_masses: Vec<f64> = Vec::new();
    let mut joints_seen = [false; 6];

    for child in &seat.children {
        v.known_child(child, &["geom", "body"])?;
        match child.name.as_str() {
            "geom" => {
                v.check_element(child, "geom", &["type", "size", "pos", "mass"])?;
                let ty = &v.require_attr(child, "type")?.value;
                match ty.as_str() {
                    "box" => {
                        if seat_box.is_some() {
                            return v.at(child.line, child.col, "more than one seat box geom");
                        }
                        let size = v.vec3(v.require_attr(child, "size")?)?;
                        let mass = v.scalar(v.require_attr(child, "mass")?)?;
                        if mass <= 0.0 {
                            return v.at(child.line, child.col, "seat mass must be positive");
                        }
                        if size.x <= 0.0 || size.y <= 0.0 || size.z <= 0.0 {
                            return v.at(child.line, child.col, "seat half-extents must be positive");
                        }
                        seat_box = Some((size, mass));
                    }
                    "sphere" => {
                        let mass = v.scalar(v.require_attr(child, "mass")?)?;
                        if mass != 0.0 {
                            return v.at(
                                child.line,
                                child.col,
                                "marker spheres on the seat must have mass=\"0\"",
                            );
                        }
                        backrest_points.push(v.vec3(v.require_attr(child, "pos")?)?);
                    }
                    other => {
                        return v.at(child.line, child.col, format!("unknown geom type `{other}`"))
                    }
                }
            }
            "body" => {
                let hip = validate_hip(&v, child, &mut joints_seen, &mut foot_masses)?;
                hips.push(hip);
            }
            _ => unreachable!(),
        }
    }

    let (seat_half_extents, seat_mass) = seat_box
        .ok_or_else(|| ModelError::Invalid {
            path: path.to_string(),
            msg: "the seat body has no box geom".into(),
        })?;

    if hips.len() != 3 {
        return Err(ModelError::Invalid {
            path: path.to_string(),
            msg: format!("expected exactly 3 hip bodies, found {}", hips.len()),
        });
    }
    debug_assert!(joints_seen.iter().all(|&s| s));

    let foot_mass = foot_masses[0];
    if foot_masses.iter().any(|&m| m != foot_mass) {
        return Err(ModelError::Invalid {
            path: path.to_string(),
            msg: "all three foot masses must be equal".into(),
        });
    }

    Ok(RobotModel {
        name,
        seat_half_extents,
        seat_mass,
        foot_mass,
        backrest_points,
        hips: [hips[0].clone(), hips[1].clone(), hips[2].clone()],
        joint_signs: [1.0; 6],
        // One (min, max) per joint, keyed by the joint's `name` index and
        // read back out of the hinge ranges in the element tree.
        joint_range_deg: {
            let mut ranges = [(0.0, 0.0); 6];
            for hip in &hips {
                ranges[hip.joints.0] = hip_range(&v, seat, hip.joints.0)?;
                ranges[hip.joints.1] = hip_range(&v, seat, hip.joints.1)?;
            }
            ranges
        },
    })
}

/// Fetch the range of the joint named `j{idx}` back out of the element tree.
fn hip_range(v: &Validator, seat: &Element, idx: usize) -> Result<(f64, f64), ModelError> {
    let want = format!("j{idx}");
    for child in &seat.children {
        if child.name != "body" {
            continue;
        }
        for j in &child.children {
            if j.name != "joint" {
                continue;
            }
            if v.require_attr(j, "name")?.value == want {
                let r = v.floats(v.require_attr(j, "range")?, 2)?;
                return Ok((r[0], r[1]));
            }
        }
    }
    unreachable!("joint `{want}` was seen during validation");
}

fn validate_hip(
    v: &Validator,
    body: &Element,
    joints_seen: &mut [bool; 6],
    foot_masses: &mut Vec<f64>,
) -> Result<HipSpec, ModelError> {
    v.check_element(body, "body", &["name", "pos"])?;
    let name = v.require_attr(body, "name")?.value.clone();
    let pos = v.vec3(v.require_attr(body, "pos")?)?;

    let mut axes: Vec<(Vec3, usize)> = Vec::new();
    let mut leg_length: Option<f64> = None;

    for child in &body.children {
        v.known_child(child, &["joint", "geom"])?;
        match child.name.as_str() {
            "joint" => {
                v.check_element(child, "joint", &["name", "type", "axis", "range"])?;
                let ty = &v.require_attr(child, "type")?.value;
                if ty != "hinge" {
                    return v.at(child.line, child.col, format!("unknown joint type `{ty}`"));
                }
                let axis = v.vec3(v.require_attr(child, "axis")?)?;
                if (axis.norm() - 1.0).abs() > 1e-9 {
                    return v.at(child.line, child.col, "joint axis must be a unit vector");
                }
                let r = v.floats(v.require_attr(child, "range")?, 2)?;
                if !(r[0] < 0.0 && 0.0 < r[1]) {
                    return v.at(
                        child.line,
                        child.col,
                        "joint range must straddle 0 (degrees about the neutral command)",
                    );
                }
                let jname = &v.require_attr(child, "name")?.value;
                let idx = match jname.strip_prefix('j').and_then(|n| n.parse::<usize>().ok()) {
                    Some(i) if i < 6 => i,
                    _ => {
                        return v.at(
                            child.line,
                            child.col,
                            format!("joint name must be `j0`..`j5`, got `{jname}`"),
                        )
                    }
                };
                if joints_seen[idx] {
                    return v.at(child.line, child.col, format!("duplicate joint `{jname}`"));
                }
                joints_seen[idx] = true;
                axes.push((axis, idx));
            }
            "geom" => {
                v.check_element(child, "geom", &["type", "size", "pos", "mass"])?;
                let ty = &v.require_attr(child, "type")?.value;
                if ty != "sphere" {
                    return v.at(child.line, child.col, "a hip body's geom must be a foot sphere");
                }
                if leg_length.is_some() {
                    return v.at(child.line, child.col, "more than one foot geom on a hip");
                }
                let fpos = v.vec3(v.require_attr(child, "pos")?)?;
                if fpos.x != 0.0 || fpos.y != 0.0 || fpos.z >= 0.0 {
                    return v.at(
                        child.line,
                        child.col,
                        "foot geom pos must be `0 0 -length` (below the hip)",
                    );
                }
                let mass = v.scalar(v.require_attr(child, "mass")?)?;
                if mass <= 0.0 {
                    return v.at(child.line, child.col, "foot mass must be positive");
                }
                foot_masses.push(mass);
                leg_length = Some(-fpos.z);
            }
            _ => unreachable!(),
        }
    }

    if axes.len() != 2 {
        return v.at(body.line, body.col, format!("hip `{name}` must have exactly 2 joints"));
    }
    if axes[0].0.dot(axes[1].0).abs() > 1e-9 {
        return v.at(body.line, body.col, format!("hip `{name}` joint axes must be perpendicular"));
    }
    let leg_length = match leg_length {
        Some(l) => l,
        None => return v.at(body.line, body.col, format!("hip `{name}` has no foot geom")),
    };

    Ok(HipSpec {
        name,
        pos,
        axis1: axes[0].0,
        axis2: axes[1].0,
        leg_length,
        joints: (axes[0].1, axes[1].1),
    })
}
