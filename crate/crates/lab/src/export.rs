//! Trajectory files. CSV and JSON both reproduce the snapshots bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use obukhov_core::integrator::Trajectory;
use obukhov_core::ladder::LadderParams;
use obukhov_core::model::Form;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Format, ScenarioConfig};
use crate::error::{LabError, Result};

/// First 16 hex digits of the SHA-256 of the ladder's JSON encoding.
pub fn ladder_hash(params: &LadderParams) -> String {
    let bytes = serde_json::to_vec(params).expect("ladder parameters serialize");
    let digest = Sha256::digest(&bytes);
    hex::encode(&digest[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ScenarioConfig>,
    pub ladder: LadderParams,
    pub ladder_hash: String,
    pub trajectory: Trajectory,
}

/// What an import recovers: the snapshots plus the provenance header.
#[derive(Debug, Clone, PartialEq)]
pub struct Imported {
    pub ladder_hash: String,
    pub ladder: Option<LadderParams>,
    pub trajectory: Trajectory,
}

pub fn csv_string(traj: &Trajectory, params: &LadderParams) -> Result<String> {
    if traj.is_empty() {
        return Err(obukhov_core::Error::EmptyTrajectory.into());
    }
    let mut out = String::new();
    let _ = writeln!(out, "# form={} ladder={}", traj.form.name(), ladder_hash(params));
    out.push('t');
    for k in 0..traj.dim() {
        let _ = write!(out, ",x_{k}");
    }
    out.push('\n');
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let _ = write!(out, "{t:e}");
        for v in x {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn json_string(
    traj: &Trajectory,
    params: &LadderParams,
    config: Option<&ScenarioConfig>,
) -> Result<String> {
    if traj.is_empty() {
        return Err(obukhov_core::Error::EmptyTrajectory.into());
    }
    let doc = TrajectoryDocument {
        config: config.cloned(),
        ladder: *params,
        ladder_hash: ladder_hash(params),
        trajectory: traj.clone(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| LabError::Config(e.to_string()))
}

/// Writes `traj` to `path` and returns the number of bytes written.
pub fn export_trajectory(
    traj: &Trajectory,
    params: &LadderParams,
    config: Option<&ScenarioConfig>,
    path: &Path,
    format: Format,
) -> Result<u64> {
    let text = match format {
        Format::Csv => csv_string(traj, params)?,
        Format::Json => json_string(traj, params, config)?,
    };
    std::fs::write(path, &text).map_err(|e| LabError::io(path, e))?;
    Ok(text.len() as u64)
}

pub fn import_trajectory(path: &Path) -> Result<Imported> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let fail = |message: String| LabError::Import {
        path: path.to_path_buf(),
        message,
    };
    let imported = if text.trim_start().starts_with('{') {
        let doc: TrajectoryDocument =
            serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        Imported {
            ladder_hash: doc.ladder_hash,
            ladder: Some(doc.ladder),
            trajectory: doc.trajectory,
        }
    } else {
        parse_csv(&text).map_err(fail)?
    };
    if imported.trajectory.is_empty() {
        return Err(fail("no snapshots".into()));
    }
    Ok(imported)
}

fn parse_csv(text: &str) -> std::result::Result<Imported, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("missing header")?;
    let meta = header.strip_prefix("# ").ok_or("missing '# form=... ladder=...' header")?;
    let mut form = None;
    let mut hash = None;
    for field in meta.split_whitespace() {
        match field.split_once('=') {
            Some(("form", v)) => form = Some(v.parse::<Form>().map_err(|e| e.to_string())?),
            Some(("ladder", v)) => hash = Some(v.to_string()),
            _ => return Err(format!("unexpected header field '{field}'")),
        }
    }
    let form = form.ok_or("header lacks form")?;
    let columns = lines.next().ok_or("missing column row")?;
    let width = columns.split(',').count();
    if width < 2 || !columns.starts_with("t,") {
        return Err(format!("bad column row '{columns}'"));
    }
    let mut traj = Trajectory::new(form);
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format!("row {}: {e}", i + 1))?;
        if values.len() != width {
            return Err(format!("row {} has {} fields, expected {width}", i + 1, values.len()));
        }
        traj.times.push(values[0]);
        traj.states.push(values[1..].to_vec());
    }
    Ok(Imported {
        ladder_hash: hash.ok_or("header lacks ladder hash")?,
        ladder: None,
        trajectory: traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let mut t = Trajectory::new(Form::Rescaled);
        t.times = vec![0.0, -0.1, -1.0 / 3.0];
        t.states = vec![
            vec![1.0, 2.0, 3.0],
            vec![0.1 + 0.2, f64::MIN_POSITIVE, 1e300],
            vec![-0.0, 5e-324, std::f64::consts::PI],
        ];
        t
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = LadderParams::figure2(4);
        assert_eq!(ladder_hash(&a), ladder_hash(&a));
        assert_eq!(ladder_hash(&a).len(), 16);
        assert_ne!(ladder_hash(&a), ladder_hash(&a.with_k_max(5)));
    }

    #[test]
    fn csv_values_parse_back_bit_for_bit() {
        let text = csv_string(&sample(), &LadderParams::figure2(2)).unwrap();
        let back = parse_csv(&text).unwrap().trajectory;
        for (a, b) in back.states.iter().flatten().zip(sample().states.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.times, sample().times);
    }

    #[test]
    fn csv_has_one_column_per_mode_plus_time() {
        let text = csv_string(&sample(), &LadderParams::figure2(2)).unwrap();
        let columns = text.lines().nth(1).unwrap();
        assert_eq!(columns, "t,x_0,x_1,x_2");
    }

    #[test]
    fn empty_trajectories_are_refused() {
        let empty = Trajectory::new(Form::L2);
        assert!(csv_string(&empty, &LadderParams::figure2(2)).is_err());
        assert!(json_string(&empty, &LadderParams::figure2(2), None).is_err());
    }

    #[test]
    fn malformed_rows_are_reported() {
        let bad = "# form=l2 ladder=00\nt,x_0\n0e0,1e0,2e0\n";
        assert!(parse_csv(bad).unwrap_err().contains("row 1"));
        assert!(parse_csv("t,x_0\n").is_err());
    }
}
