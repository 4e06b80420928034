//! JSON-lines dataset format, one graph per line.
//!
//! ```text
//! {"v":1,"n":3,"edges":[[0,1],[1,2]],"x":[[0.1,1.0],[...],[...]],
//!  "node_types":[0,0,1],"label":2,
//!  "env_meta":{"family":"tree","env_id":0,"base_size":8,"size_bucket":0,"env_dims":[4,5]},
//!  "gt_motif":{"nodes":[false,true,true],"edges":[false,true]},
//!  "split":"train","shift":{"kind":"covariate","domain":"basis"}}
//! ```
//!
//! `env_meta`, `gt_motif`, `split` and `shift` are optional. When a dataset
//! is split, every line carries both `split` and the same `shift`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, EnvMeta, Graph, GroundTruth, ShiftDescriptor, SplitAssignment, SplitTag};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    v: u32,
    n: usize,
    edges: Vec<(usize, usize)>,
    x: Vec<Vec<f64>>,
    node_types: Vec<usize>,
    label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    env_meta: Option<EnvMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_motif: Option<GroundTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift: Option<ShiftDescriptor>,
    /// Feature width, needed to restore zero-node graphs.
    d: usize,
}

fn to_record(g: &Graph, split: Option<(SplitTag, ShiftDescriptor)>) -> Record {
    Record {
        v: SCHEMA_VERSION,
        n: g.node_count(),
        edges: g.edges().to_vec(),
        x: g.features().rows().into_iter().map(|r| r.to_vec()).collect(),
        node_types: g.node_types().to_vec(),
        label: g.label(),
        env_meta: g.env_meta().cloned(),
        gt_motif: g.gt_motif().cloned(),
        split: split.map(|s| s.0),
        shift: split.map(|s| s.1),
        d: g.feature_dim(),
    }
}

fn from_record(r: Record) -> Result<Graph> {
    if r.v != SCHEMA_VERSION {
        return Err(Error::structural(format!("unsupported schema version {}", r.v)));
    }
    if r.x.len() != r.n || r.x.iter().any(|row| row.len() != r.d) {
        return Err(Error::structural("feature rows do not match n × d"));
    }
    let flat: Vec<f64> = r.x.into_iter().flatten().collect();
    let x = Array2::from_shape_vec((r.n, r.d), flat).map_err(|e| Error::structural(e.to_string()))?;
    Graph::new(r.n, r.edges, x, r.node_types, r.label)?
        .with_env_meta(r.env_meta)
        .with_gt_motif(r.gt_motif)
}

/// Writes `dataset` as JSON lines. An empty dataset produces an empty file.
pub fn write_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (i, g) in dataset.graphs.iter().enumerate() {
        let split = dataset.split.as_ref().map(|s| (s.tags[i], s.shift));
        let line = serde_json::to_string(&to_record(g, split))
            .map_err(|e| Error::structural(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines dataset. Errors name the 1-based offending line.
pub fn read_jsonl(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut graphs = Vec::new();
    let mut tags = Vec::new();
    let mut shift: Option<ShiftDescriptor> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        match (rec.split, rec.shift) {
            (Some(tag), Some(s)) => {
                if shift.is_some_and(|prev| prev != s) {
                    return Err(parse_err("shift descriptor differs from earlier lines".into()));
                }
                if tags.len() != graphs.len() {
                    return Err(parse_err("split tag present on some lines only".into()));
                }
                shift = Some(s);
                tags.push(tag);
            }
            (None, None) => {
                if !tags.is_empty() {
                    return Err(parse_err("split tag missing".into()));
                }
            }
            _ => return Err(parse_err("`split` and `shift` must appear together".into())),
        }
        graphs.push(from_record(rec).map_err(|e| parse_err(e.to_string()))?);
    }
    match shift {
        Some(shift) => Dataset::with_split(graphs, SplitAssignment { tags, shift }),
        None => Ok(Dataset::new(graphs)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ShiftDomain, ShiftKind};

    fn sample(label: usize) -> Graph {
        let x = Array2::from_shape_vec((3, 2), vec![0.1, -2.5e-17, 1.0 / 3.0, 7.0, f64::MIN_POSITIVE, -0.0]).unwrap();
        Graph::new(3, vec![(0, 1), (1, 2)], x, vec![0, 1, 1], label)
            .unwrap()
            .with_gt_motif(Some(GroundTruth {
                nodes: vec![false, true, true],
                edges: vec![false, true],
            }))
            .unwrap()
    }

    #[test]
    fn empty_dataset_is_an_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_jsonl(&Dataset::default(), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "");
        assert_eq!(read_jsonl(&p).unwrap(), Dataset::default());
    }

    #[test]
    fn single_graph_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let ds = Dataset::new(vec![sample(2)]);
        write_jsonl(&ds, &p).unwrap();
        let back = read_jsonl(&p).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.graphs[0].features().iter().zip(ds.graphs[0].features()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn split_roundtrip_and_zero_node_graph() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let shift = ShiftDescriptor {
            kind: ShiftKind::Concept,
            domain: ShiftDomain::Size,
        };
        let ds = Dataset::with_split(
            vec![sample(0), Graph::empty(2, 1)],
            SplitAssignment {
                tags: vec![SplitTag::Train, SplitTag::Test],
                shift,
            },
        )
        .unwrap();
        write_jsonl(&ds, &p).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), ds);
    }

    #[test]
    fn malformed_line_names_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_jsonl(&Dataset::new(vec![sample(0)]), &p).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        text.push_str("{\"v\":1,\"n\":oops}\n");
        std::fs::write(&p, text).unwrap();
        match read_jsonl(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn structurally_invalid_line_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, "{\"v\":1,\"n\":2,\"edges\":[[0,5]],\"x\":[[1.0],[2.0]],\"node_types\":[0,0],\"label\":0,\"d\":1}\n").unwrap();
        assert!(matches!(read_jsonl(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_file_is_reported_as_missing() {
        let err = read_jsonl(Path::new("/nonexistent/x.jsonl")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
