//! Trajectory CSV: one row per 10 Hz command pairing the commanded servo
//! angles with the measured pose, plus reward and reset columns for policy
//! runs.

use chair_core::geom::Vec3;
use chair_core::model::ServoDegrees;

use crate::CliError;

/// Frozen column order. `reward` is blank for scripted runs.
pub const CSV_HEADER: &str =
    "t,x,y,z,roll,pitch,yaw,theta0,theta1,theta2,theta3,theta4,theta5,reward,reset";

/// The numeric columns a plot consumes, in header order after `t`.
pub const NUMERIC_COLUMNS: [&str; 12] = [
    "x", "y", "z", "roll", "pitch", "yaw", "theta0", "theta1", "theta2", "theta3", "theta4",
    "theta5",
];

#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    /// Command timestamp, s.
    pub t: f64,
    /// Seat center after the step, m.
    pub position: Vec3,
    /// Roll, pitch, yaw after the step, deg.
    pub rpy_deg: (f64, f64, f64),
    /// Commanded servo angles, deg.
    pub theta_deg: ServoDegrees,
    /// Step reward total; `None` for scripted runs.
    pub reward: Option<f64>,
    /// Reset reason name ("none" while the episode is running).
    pub reset: &'static str,
}

impl TrajectoryRow {
    fn csv_line(&self) -> String {
        let th = &self.theta_deg;
        let reward = self.reward.map(|r| format!("{r:.6}")).unwrap_or_default();
        format!(
            "{:.1},{:.6},{:.6},{:.6},{:.3},{:.3},{:.3},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{},{}",
            self.t,
            self.position.x,
            self.position.y,
            self.position.z,
            self.rpy_deg.0,
            self.rpy_deg.1,
            self.rpy_deg.2,
            th[0],
            th[1],
            th[2],
            th[3],
            th[4],
            th[5],
            reward,
            self.reset,
        )
    }
}

pub fn format_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

/// Parsed numeric trajectory data, column-major.
#[derive(Debug, Clone)]
pub struct ParsedTrajectory {
    pub t: Vec<f64>,
    /// Indexed like [`NUMERIC_COLUMNS`].
    pub columns: [Vec<f64>; 12],
}

pub fn parse_csv(src: &str, path: &str) -> Result<ParsedTrajectory, CliError> {
    let mut lines = src.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Usage(format!("{path}: empty file")))?;
    if header != CSV_HEADER {
        let expected: Vec<&str> = CSV_HEADER.split(',').collect();
        let got: Vec<&str> = header.split(',').collect();
        let missing: Vec<&str> =
            expected.iter().filter(|c| !got.contains(c)).copied().collect();
        let detail = if missing.is_empty() {
            format!("columns are present but misordered or extended: `{header}`")
        } else {
            format!("missing columns: {}", missing.join(", "))
        };
        return Err(CliError::Usage(format!("{path}: csv header mismatch; {detail}")));
    }
    let mut t = Vec::new();
    let mut columns: [Vec<f64>; 12] = Default::default();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(CliError::Usage(format!(
                "{path}:{lineno}: expected 15 fields, got {}",
                fields.len()
            )));
        }
        let num = |col: usize| -> Result<f64, CliError> {
            let v: f64 = fields[col].parse().map_err(|_| {
                CliError::Usage(format!(
                    "{path}:{lineno}: bad number `{}` in column {}",
                    fields[col],
                    CSV_HEADER.split(',').nth(col).unwrap_or("?")
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Usage(format!(
                    "{path}:{lineno}: non-finite value in column {}",
                    CSV_HEADER.split(',').nth(col).unwrap_or("?")
                )));
            }
            Ok(v)
        };
        t.push(num(0)?);
        for (c, column) in columns.iter_mut().enumerate() {
            column.push(num(c + 1)?);
        }
    }
    if t.is_empty() {
        return Err(CliError::Usage(format!("{path}: no data rows")));
    }
    Ok(ParsedTrajectory { t, columns })
}
