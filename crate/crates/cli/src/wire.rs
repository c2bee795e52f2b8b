//! Serial line protocol: outbound `CMD <t> <θ0> … <θ5>` command lines
//! (degrees, 2 decimals; t in seconds, 1 decimal) and inbound
//! `IMU <t> <qx> <qy> <qz> <qw>` attitude lines (6 decimals).

use chair_core::geom::Quat;
use chair_core::model::ServoDegrees;

pub fn cmd_line(t: f64, servo: &ServoDegrees) -> String {
    format!(
        "CMD {t:.1} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
        servo[0], servo[1], servo[2], servo[3], servo[4], servo[5]
    )
}

pub fn imu_line(t: f64, q: Quat) -> String {
    format!("IMU {t:.1} {:.6} {:.6} {:.6} {:.6}", q.x, q.y, q.z, q.w)
}

fn fields<'a>(line: &'a str, tag: &str, n: usize) -> Result<Vec<f64>, String> {
    let mut words = line.split_whitespace();
    match words.next() {
        Some(w) if w == tag => {}
        Some(w) => return Err(format!("expected `{tag}`, got `{w}`")),
        None => return Err(format!("expected `{tag}`, got an empty line")),
    }
    let values: Result<Vec<f64>, _> = words.map(str::parse).collect();
    let values = values.map_err(|e| format!("bad number in `{tag}` line: {e}"))?;
    if values.len() != n {
        return Err(format!("`{tag}` line needs {n} values, got {}", values.len()));
    }
    Ok(values)
}

pub fn parse_cmd(line: &str) -> Result<(f64, ServoDegrees), String> {
    let v = fields(line, "CMD", 7)?;
    Ok((v[0], [v[1], v[2], v[3], v[4], v[5], v[6]]))
}

pub fn parse_imu(line: &str) -> Result<(f64, Quat), String> {
    let v = fields(line, "IMU", 5)?;
    Ok((v[0], Quat::new(v[1], v[2], v[3], v[4])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standing_posture_formats_to_the_reference_line() {
        let line = cmd_line(0.0, &[90.0, 80.0, 90.0, 100.0, 90.0, 100.0]);
        assert_eq!(line, "CMD 0.0 90.00 80.00 90.00 100.00 90.00 100.00");
    }

    #[test]
    fn cmd_lines_round_trip() {
        let servo = [91.25, 80.5, 90.0, 100.75, 89.0, 101.0];
        let (t, back) = parse_cmd(&cmd_line(1.5, &servo)).unwrap();
        assert_eq!(t, 1.5);
        assert_eq!(back, servo);
    }

    #[test]
    fn imu_lines_round_trip_to_six_decimals() {
        let q = Quat::new(0.123456, -0.5, 0.25, 0.75).normalized();
        let (t, back) = parse_imu(&imu_line(2.0, q)).unwrap();
        assert_eq!(t, 2.0);
        for (a, b) in [(back.x, q.x), (back.y, q.y), (back.z, q.z), (back.w, q.w)] {
            assert!((a - b).abs() < 5e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_cmd("IMU 0.0 0 0 0 1").is_err());
        assert!(parse_cmd("CMD 0.0 90.00").is_err());
        assert!(parse_imu("IMU 0.0 a b c d").is_err());
    }
}
