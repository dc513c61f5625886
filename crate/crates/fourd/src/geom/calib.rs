//! Plain-text calibration file: camera intrinsics and the sensor-to-camera
//! extrinsic transform.
//!
//! Format, one record per line, `#` starts a comment:
//!
//! ```text
//! intrinsics: fx fy cx cy width height
//! T_cl: r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3
//! ```
//!
//! Numbers are written with shortest round-trip formatting, so a
//! write/read cycle reproduces the exact same values.

use super::{CameraIntrinsics, GeomError, RigidTransform};
use std::fmt::Write as _;
use std::path::Path;

/// Everything needed to relate the sensor frame to pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub intrinsics: CameraIntrinsics,
    /// Sensor frame to camera frame.
    pub t_cl: RigidTransform,
}

pub fn write_calibration(calib: &Calibration, path: &Path) -> Result<(), GeomError> {
    let k = &calib.intrinsics;
    let mut out = String::new();
    writeln!(out, "intrinsics: {} {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height)
        .expect("string write");
    let m = calib.t_cl.to_row_major();
    out.push_str("T_cl:");
    for v in m {
        write!(out, " {v}").expect("string write");
    }
    out.push('\n');
    std::fs::write(path, out)
        .map_err(|e| GeomError::Calibration(format!("{}: {e}", path.display())))
}

pub fn read_calibration(path: &Path) -> Result<Calibration, GeomError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GeomError::Calibration(format!("{}: {e}", path.display())))?;
    let mut intrinsics = None;
    let mut t_cl = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fail = |msg: &str| GeomError::Calibration(format!("line {}: {msg}", lineno + 1));
        let (key, rest) = line.split_once(':').ok_or_else(|| fail("missing ':'"))?;
        let values: Vec<f64> = rest
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| fail(&format!("bad number: {e}")))?;
        match key.trim() {
            "intrinsics" => {
                if values.len() != 6 {
                    return Err(fail("intrinsics needs 6 values"));
                }
                intrinsics = Some(
                    CameraIntrinsics::new(
                        values[0],
                        values[1],
                        values[2],
                        values[3],
                        values[4] as u32,
                        values[5] as u32,
                    )
                    .map_err(|e| fail(&e.to_string()))?,
                );
            }
            "T_cl" => {
                if values.len() != 12 {
                    return Err(fail("T_cl needs 12 values"));
                }
                let arr: [f64; 12] = values.try_into().expect("length checked");
                t_cl = Some(RigidTransform::from_row_major(&arr).map_err(|e| fail(&e.to_string()))?);
            }
            other => return Err(fail(&format!("unknown key '{other}'"))),
        }
    }
    Ok(Calibration {
        intrinsics: intrinsics
            .ok_or_else(|| GeomError::Calibration("missing 'intrinsics' record".into()))?,
        t_cl: t_cl.ok_or_else(|| GeomError::Calibration("missing 'T_cl' record".into()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn sample() -> Calibration {
        // Ego x-forward/y-left/z-up to camera x-right/y-down/z-forward.
        let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        Calibration {
            intrinsics: CameraIntrinsics::new(200.0, 200.0, 192.0, 128.0, 384, 256).unwrap(),
            t_cl: RigidTransform::new(r, Vector3::new(0.0, 1.5, 0.0)).unwrap(),
        }
    }

    #[test]
    fn round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.txt");
        let calib = sample();
        write_calibration(&calib, &path).unwrap();
        let back = read_calibration(&path).unwrap();
        assert_eq!(calib.intrinsics, back.intrinsics);
        assert_eq!(calib.t_cl.to_row_major(), back.t_cl.to_row_major());
    }

    #[test]
    fn reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.txt");
        std::fs::write(&path, "intrinsics: 1 2 3\n").unwrap();
        let err = read_calibration(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn rejects_missing_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.txt");
        std::fs::write(&path, "# empty\n").unwrap();
        let err = read_calibration(&path).unwrap_err();
        assert!(err.to_string().contains("intrinsics"), "{err}");
    }
}
