//! Keyframe gait scripts and their expansion into 10 Hz command traces.
//!
//! A gait is a short list of servo postures with a per-transition step count
//! `n`: each transition is expanded by linear interpolation into `n`
//! intermediate commands, so a segment contributes `n + 1` commands plus the
//! final keyframe. Scripts either run once (stand-up) or loop (walk); a
//! looping script must return to its first posture, and its compiled cycle
//! omits that duplicate so the cycle can repeat seamlessly.

use std::fmt::Write as _;
use thiserror::Error;

/// Six servo command angles in degrees; 90 is the vertical-leg neutral.
pub type Posture = [f64; 6];

/// Seconds between successive commands (10 Hz control loop).
pub const COMMAND_PERIOD: f64 = 0.1;

/// The standing posture both bundled scripts start and end on.
pub const STANDING_POSTURE: Posture = [90.0, 80.0, 90.0, 100.0, 90.0, 100.0];

#[derive(Debug, Error, PartialEq)]
pub enum GaitError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("sink rejected command {index}: {msg}")]
    Sink { index: usize, msg: String },
}

/// A keyframe script: postures joined by interpolated transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitScript {
    /// Whether playback repeats the cycle indefinitely.
    pub looping: bool,
    pub postures: Vec<Posture>,
    /// `steps[i]` intermediate commands between `postures[i]` and
    /// `postures[i+1]`; length is `postures.len() - 1`.
    pub steps: Vec<usize>,
}

/// A compiled sequence of 10 Hz commands.
pub type CommandTrace = Vec<Posture>;

/// Interpolate from `a` to `b` with `n` intermediate postures.
///
/// Returns `n + 2` postures; element `k` weights the endpoints
/// `( (n+1−k)/(n+1), k/(n+1) )`, so the first and last elements are the
/// keyframes themselves, bit for bit.
pub fn interpolate(a: &Posture, b: &Posture, n: usize) -> Vec<Posture> {
    let denom = (n + 1) as f64;
    let mut out = Vec::with_capacity(n + 2);
    out.push(*a);
    for k in 1..=n {
        let wb = k as f64 / denom;
        let wa = (n + 1 - k) as f64 / denom;
        let mut p = [0.0; 6];
        for i in 0..6 {
            p[i] = a[i] * wa + b[i] * wb;
        }
        out.push(p);
    }
    out.push(*b);
    out
}

impl GaitScript {
    pub fn validate(&self) -> Result<(), GaitError> {
        if self.postures.len() < 2 {
            return Err(GaitError::Invalid("a script needs at least 2 postures".into()));
        }
        if self.steps.len() != self.postures.len() - 1 {
            return Err(GaitError::Invalid(format!(
                "{} postures need {} step counts, got {}",
                self.postures.len(),
                self.postures.len() - 1,
                self.steps.len()
            )));
        }
        for p in &self.postures {
            if p.iter().any(|a| !a.is_finite()) {
                return Err(GaitError::Invalid("non-finite angle in posture".into()));
            }
        }
        if self.looping && self.postures.first() != self.postures.last() {
            return Err(GaitError::Invalid(
                "a looping script must end on its first posture".into(),
            ));
        }
        Ok(())
    }
}

/// Expand a script into its command trace.
///
/// Junction keyframes are emitted once, and a final posture identical to the
/// first is dropped (for a looping script it restarts the cycle; for a
/// one-shot script it would re-issue an already-covered command). A script
/// that ends where it began therefore yields `Σ(nᵢ + 1)` commands, any other
/// one-shot script `Σ(nᵢ + 1) + 1`.
pub fn compile_script(script: &GaitScript) -> Result<CommandTrace, GaitError> {
    script.validate()?;
    let mut trace: CommandTrace = Vec::new();
    for (i, n) in script.steps.iter().enumerate() {
        let seg = interpolate(&script.postures[i], &script.postures[i + 1], *n);
        let skip = usize::from(i > 0); // junction already emitted
        trace.extend_from_slice(&seg[skip..]);
    }
    if trace.len() >= 2 && trace.first() == trace.last() {
        trace.pop();
    }
    Ok(trace)
}

/// Stream `count` commands from a trace into `sink` in playback order.
///
/// A looping trace wraps around; a one-shot trace holds its final posture
/// once exhausted. The sink sees `(command index, posture)` and may abort
/// playback by returning an error message.
pub fn play<F>(trace: &CommandTrace, looping: bool, count: usize, mut sink: F) -> Result<(), GaitError>
where
    F: FnMut(usize, &Posture) -> Result<(), String>,
{
    if trace.is_empty() {
        return Err(GaitError::Invalid("empty command trace".into()));
    }
    for k in 0..count {
        let idx = if looping { k % trace.len() } else { k.min(trace.len() - 1) };
        sink(k, &trace[idx]).map_err(|msg| GaitError::Sink { index: k, msg })?;
    }
    Ok(())
}

/// The bundled forward-walk script (looping, 10 commands per 1.0 s cycle).
pub fn walk_script() -> GaitScript {
    GaitScript {
        looping: true,
        postures: vec![
            [90.0, 80.0, 90.0, 100.0, 90.0, 100.0],
            [90.0, 80.0, 90.0, 100.0, 90.0, 140.0],
            [70.0, 80.0, 90.0, 100.0, 90.0, 140.0],
            [70.0, 80.0, 110.0, 100.0, 90.0, 140.0],
            [90.0, 80.0, 90.0, 100.0, 90.0, 100.0],
        ],
        steps: vec![0, 0, 0, 6],
    }
}

/// The bundled stand-up script (one-shot, 78 commands ≈ 7.8 s).
pub fn standup_script() -> GaitScript {
    GaitScript {
        looping: false,
        postures: vec![
            [90.0, 80.0, 90.0, 100.0, 90.0, 100.0],
            [90.0, 80.0, 90.0, 140.0, 40.0, 90.0],
            [130.0, 80.0, 40.0, 90.0, 150.0, 140.0],
            [130.0, 40.0, 50.0, 140.0, 90.0, 140.0],
            [90.0, 80.0, 90.0, 100.0, 90.0, 100.0],
        ],
        steps: vec![8, 0, 38, 28],
    }
}

/// Read a gait script file.
pub fn load_gait(path: &str) -> Result<GaitScript, GaitError> {
    let src = std::fs::read_to_string(path).map_err(|e| GaitError::Parse {
        path: path.to_string(),
        line: 0,
        msg: format!("cannot read file: {e}"),
    })?;
    parse_gait(&src, path)
}

/// Parse a gait script; `path` only labels errors.
///
/// Line format: a `loop true|false` header, then alternating
/// `posture <6 angles>` and `steps <n>` lines, ending on a posture.
/// Blank lines and `#` comments are allowed.
pub fn parse_gait(src: &str, path: &str) -> Result<GaitScript, GaitError> {
    let perr = |line: usize, msg: String| GaitError::Parse { path: path.to_string(), line, msg };

    let mut looping: Option<bool> = None;
    let mut postures: Vec<Posture> = Vec::new();
    let mut steps: Vec<usize> = Vec::new();

    for (i, raw) in src.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        let key = words.next().unwrap();
        match key {
            "loop" => {
                if looping.is_some() {
                    return Err(perr(lineno, "duplicate `loop` header".into()));
                }
                if !postures.is_empty() {
                    return Err(perr(lineno, "`loop` header must come first".into()));
                }
                looping = match words.next() {
                    Some("true") => Some(true),
                    Some("false") => Some(false),
                    other => {
                        return Err(perr(
                            lineno,
                            format!("`loop` takes `true` or `false`, got `{}`", other.unwrap_or("")),
                        ))
                    }
                };
            }
            "posture" => {
                if looping.is_none() {
                    return Err(perr(lineno, "missing `loop` header before postures".into()));
                }
                if postures.len() != steps.len() {
                    return Err(perr(lineno, "expected a `steps` line before this posture".into()));
                }
                let angles: Result<Vec<f64>, _> = words.map(str::parse::<f64>).collect();
                match angles {
                    Ok(v) if v.len() == 6 && v.iter().all(|a| a.is_finite()) => {
                        postures.push([v[0], v[1], v[2], v[3], v[4], v[5]]);
                    }
                    _ => {
                        return Err(perr(lineno, "`posture` needs exactly 6 finite angles".into()))
                    }
                }
            }
            "steps" => {
                if postures.len() != steps.len() + 1 {
                    return Err(perr(lineno, "`steps` must follow a posture".into()));
                }
                match words.next().map(str::parse::<usize>) {
                    Some(Ok(n)) => steps.push(n),
                    _ => return Err(perr(lineno, "`steps` needs a non-negative integer".into())),
                }
            }
            other => return Err(perr(lineno, format!("unknown directive `{other}`"))),
        }
        if key != "loop" {
            continue;
        }
    }

    let script = GaitScript {
        looping: looping
            .ok_or_else(|| perr(0, "missing `loop` header".into()))?,
        postures,
        steps,
    };
    script.validate().map_err(|e| match e {
        GaitError::Invalid(msg) => perr(0, msg),
        other => other,
    })?;
    Ok(script)
}

/// Render a script in the same line format `parse_gait` reads.
pub fn format_gait(script: &GaitScript) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "loop {}", script.looping);
    for (i, p) in script.postures.iter().enumerate() {
        let _ = writeln!(out, "posture {} {} {} {} {} {}", p[0], p[1], p[2], p[3], p[4], p[5]);
        if i < script.steps.len() {
            let _ = writeln!(out, "steps {}", script.steps[i]);
        }
    }
    out
}
