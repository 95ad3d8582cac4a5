//! On-disk formats: datasets, checkpoints, world exports, and reports.
//!
//! Every file starts with a schema header line; loaders reject unknown
//! versions. Trajectories are stored one per line as JSON records without
//! snapshots (states are reproducible by replay), so a load followed by a
//! save is byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::ChainWorldEnv;
use crate::env::{ActionToken, FingerprintId};
use crate::error::{Error, Result};
use crate::features::{FEATURE_DIM, FEATURE_SCHEMA_VERSION};
use crate::policy::PolicyParams;
use crate::shop::MiniShopEnv;
use crate::trajectory::{Provenance, Trajectory, TrajectoryStart, TrajectoryStep};

pub const TRAJECTORY_SCHEMA: u32 = 1;
pub const CHECKPOINT_SCHEMA: u32 = 1;
pub const CATALOG_SCHEMA: u32 = 1;
pub const TASKS_SCHEMA: u32 = 1;

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    let mut f =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn check_header(found: Option<&str>, expected: &str) -> Result<()> {
    match found {
        Some(line) if line == expected => Ok(()),
        other => Err(Error::FileSchema {
            expected: expected.to_string(),
            found: other.unwrap_or("<empty file>").to_string(),
        }),
    }
}

// ---------------------------------------------------------------------------
// Trajectory datasets
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StepRecord {
    fp: FingerprintId,
    observation: String,
    candidates: Vec<String>,
    action: String,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    id: u64,
    start: TrajectoryStart,
    terminal_reward: f64,
    final_fp: FingerprintId,
    steps: Vec<StepRecord>,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        TrajectoryRecord {
            id: t.id,
            start: t.start.clone(),
            terminal_reward: t.terminal_reward,
            final_fp: t.final_fingerprint,
            steps: t
                .steps
                .iter()
                .map(|s| StepRecord {
                    fp: s.fingerprint,
                    observation: s.observation.clone(),
                    candidates: s.candidates.iter().map(|c| c.as_str().to_string()).collect(),
                    action: s.action.as_str().to_string(),
                    provenance: s.provenance.clone(),
                })
                .collect(),
        }
    }
}

impl From<TrajectoryRecord> for Trajectory {
    fn from(r: TrajectoryRecord) -> Self {
        Trajectory {
            id: r.id,
            start: r.start,
            steps: r
                .steps
                .into_iter()
                .map(|s| TrajectoryStep {
                    fingerprint: s.fp,
                    snapshot: None,
                    observation: s.observation,
                    candidates: s.candidates.into_iter().map(ActionToken::new).collect(),
                    action: ActionToken::new(s.action),
                    provenance: s.provenance,
                })
                .collect(),
            terminal_reward: r.terminal_reward,
            final_fingerprint: r.final_fp,
        }
    }
}

pub fn trajectories_to_string(trajectories: &[Trajectory]) -> String {
    let mut out = format!("# trajectories schema={TRAJECTORY_SCHEMA}\n");
    for t in trajectories {
        let record = TrajectoryRecord::from(t);
        out.push_str(&serde_json::to_string(&record).expect("trajectory serializes"));
        out.push('\n');
    }
    out
}

/// Write one trajectory per line under a schema header.
pub fn persist_dataset(trajectories: &[Trajectory], path: &Path) -> Result<()> {
    write_file(path, &trajectories_to_string(trajectories))
}

/// Load a trajectory dataset; parse failures name the offending line.
pub fn load_dataset(path: &Path) -> Result<Vec<Trajectory>> {
    let text = read_file(path)?;
    trajectories_from_str(&text)
}

pub fn trajectories_from_str(text: &str) -> Result<Vec<Trajectory>> {
    let mut lines = text.lines();
    check_header(
        lines.next(),
        &format!("# trajectories schema={TRAJECTORY_SCHEMA}"),
    )?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(line).map_err(|e| Error::FileParse {
                line: i + 2,
                message: e.to_string(),
            })?;
        out.push(Trajectory::from(record));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Policy checkpoints
// ---------------------------------------------------------------------------

/// Flat text: header, featurizer schema, dimension, then one weight per
/// line with 17 significant digits for exact reload.
pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<()> {
    let mut out = format!("# policy-params schema={CHECKPOINT_SCHEMA}\n");
    out.push_str(&format!("feature_schema={}\n", params.schema_version));
    out.push_str(&format!("dim={}\n", params.weights.len()));
    for w in &params.weights {
        out.push_str(&format!("{w:.16e}\n"));
    }
    write_file(path, &out)
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    check_header(
        lines.next(),
        &format!("# policy-params schema={CHECKPOINT_SCHEMA}"),
    )?;
    let parse_kv = |line: Option<&str>, key: &str, lineno: usize| -> Result<u64> {
        line.and_then(|l| l.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or(Error::FileParse {
                line: lineno,
                message: format!("expected `{key}<integer>`"),
            })
    };
    let schema_version = parse_kv(lines.next(), "feature_schema=", 2)? as u32;
    if schema_version != FEATURE_SCHEMA_VERSION {
        return Err(Error::SchemaMismatch {
            expected: FEATURE_SCHEMA_VERSION,
            got: schema_version,
        });
    }
    let dim = parse_kv(lines.next(), "dim=", 3)? as usize;
    if dim != FEATURE_DIM {
        return Err(Error::FileParse {
            line: 3,
            message: format!("dimension {dim} does not match the feature schema ({FEATURE_DIM})"),
        });
    }
    let mut weights = Vec::with_capacity(dim);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let w: f64 = line.parse().map_err(|_| Error::FileParse {
            line: i + 4,
            message: format!("bad weight literal {line:?}"),
        })?;
        weights.push(w);
    }
    if weights.len() != dim {
        return Err(Error::FileParse {
            line: 3 + weights.len(),
            message: format!("expected {dim} weights, found {}", weights.len()),
        });
    }
    Ok(PolicyParams {
        weights,
        schema_version,
    })
}

// ---------------------------------------------------------------------------
// World exports
// ---------------------------------------------------------------------------

/// Catalog export: one product record per line.
pub fn export_catalog(env: &MiniShopEnv, path: &Path) -> Result<()> {
    let mut out = format!("# minishop-catalog schema={CATALOG_SCHEMA}\n");
    for p in &env.catalog().products {
        out.push_str(&serde_json::to_string(p).expect("product serializes"));
        out.push('\n');
    }
    write_file(path, &out)
}

#[derive(Serialize)]
struct ShopTaskRecord<'a> {
    task_id: usize,
    split: String,
    instruction: &'a str,
    category: &'a str,
    color: &'a str,
    max_price: f64,
    required_options: &'a std::collections::BTreeMap<String, String>,
    target_pid: &'a str,
    tags: Vec<&'static str>,
}

/// Task-split export: one task record per line, split tagged.
pub fn export_shop_tasks(env: &MiniShopEnv, path: &Path) -> Result<()> {
    let mut out = format!("# minishop-tasks schema={TASKS_SCHEMA}\n");
    for t in env.tasks() {
        let record = ShopTaskRecord {
            task_id: t.task_id,
            split: t.split.to_string(),
            instruction: &t.instruction,
            category: &t.category,
            color: &t.color,
            max_price: t.max_price,
            required_options: &t.required_options,
            target_pid: &t.target_pid,
            tags: t.tags.iter().map(|tag| tag.as_str()).collect(),
        };
        out.push_str(&serde_json::to_string(&record).expect("task serializes"));
        out.push('\n');
    }
    write_file(path, &out)
}

/// ChainWorld task export, one record per line.
pub fn export_chain_tasks(env: &ChainWorldEnv, path: &Path) -> Result<()> {
    let mut out = format!("# chainworld-tasks schema={TASKS_SCHEMA}\n");
    for t in env.tasks() {
        out.push_str(&serde_json::to_string(t).expect("task serializes"));
        out.push('\n');
    }
    write_file(path, &out)
}

// ---------------------------------------------------------------------------
// Structured JSON artifacts (manifests, reports)
// ---------------------------------------------------------------------------

/// Deterministic pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_file(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| Error::FileParse {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Render an aligned plain-text table.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i < widths.len() {
                widths[i] = widths[i].max(cell.len());
            }
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: Vec<String>, widths: &[usize]| -> String {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    out.push_str(&fmt_row(
        headers.iter().map(|h| h.to_string()).collect(),
        &widths,
    ));
    out.push('\n');
    out.push_str(&fmt_row(
        widths.iter().map(|w| "-".repeat(*w)).collect(),
        &widths,
    ));
    out.push('\n');
    for row in rows {
        out.push_str(&fmt_row(row.clone(), &widths));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ContextId, Split};
    use crate::trajectory::Origin;
    use tempfile::tempdir;

    fn sample_traj(id: u64) -> Trajectory {
        Trajectory {
            id,
            start: TrajectoryStart {
                context: ContextId {
                    id: 3,
                    split: Split::Train,
                },
                origin: Origin::ExpertState {
                    expert_traj_id: 1,
                    state_index: 2,
                },
            },
            steps: vec![TrajectoryStep {
                fingerprint: 42,
                snapshot: None,
                observation: "Instruction: x\n[Search]".into(),
                candidates: vec![ActionToken::new("search[navy sofa]")],
                action: ActionToken::new("search[navy sofa]"),
                provenance: Provenance::Expert("strong".into()),
            }],
            terminal_reward: 1.0,
            final_fingerprint: 99,
        }
    }

    #[test]
    fn dataset_roundtrip_is_stable_on_reserialization() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("set.jsonl");
        let trajs = vec![sample_traj(0), sample_traj(1)];
        persist_dataset(&trajs, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(
            trajectories_to_string(&trajs),
            trajectories_to_string(&loaded)
        );
    }

    #[test]
    fn bumped_schema_version_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("set.jsonl");
        std::fs::write(&path, "# trajectories schema=2\n{}\n").unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::FileSchema { .. })
        ));
    }

    #[test]
    fn truncated_dataset_names_the_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("set.jsonl");
        let mut text = trajectories_to_string(&[sample_traj(0), sample_traj(1)]);
        // Chop the last record in half.
        text.truncate(text.len() - 40);
        std::fs::write(&path, text).unwrap();
        match load_dataset(&path) {
            Err(Error::FileParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("params.txt");
        let mut params = PolicyParams::zeros();
        for (i, w) in params.weights.iter_mut().enumerate() {
            *w = (i as f64 + 0.123456789012345).sin() * 1e3;
        }
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(params.weights, loaded.weights);
    }

    #[test]
    fn checkpoint_rejects_other_schemas() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("params.txt");
        std::fs::write(&path, "# policy-params schema=9\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn table_rendering_aligns_columns() {
        let table = render_table(
            &["method", "win"],
            &[
                vec!["eef".into(), "0.85".into()],
                vec!["rft-x6".into(), "0.70".into()],
            ],
        );
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("method"));
        assert!(lines[2].starts_with("eef"));
    }
}
