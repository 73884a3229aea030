//! Text dataset format.
//!
//! A dataset directory holds `meta.json`, `edges.tsv` (`src dst weight`,
//! stored once per undirected edge with `src < dst`), `features.tsv` and
//! `labels.tsv` (one tab-separated row per node) and `split.tsv`
//! (`node role`). Synthetic graphs add `"structure"` to the metadata and,
//! when learned, a dense `adj.tsv`. Floats are written in shortest
//! round-trip form, so loading returns bit-identical values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::condense::{MatchTrace, Phase, TraceRecord};
use crate::error::{Error, Result};
use crate::graph::{LabeledGraph, SplitRole, StructureMode, SyntheticGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub directed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureMode>,
}

fn parse_error(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { file: file.to_string(), line, message: message.into() }
}

fn read(dir: &Path, file: &str) -> Result<String> {
    fs::read_to_string(dir.join(file)).map_err(|e| parse_error(file, 0, format!("cannot read: {e}")))
}

/// Non-empty lines with their 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.trim().is_empty())
}

fn parse_field<T: std::str::FromStr>(file: &str, line: usize, field: &str, what: &str) -> Result<T> {
    field.trim().parse().map_err(|_| parse_error(file, line, format!("invalid {what} `{field}`")))
}

fn read_meta(dir: &Path) -> Result<Meta> {
    let meta: Meta = serde_json::from_str(&read(dir, "meta.json")?)
        .map_err(|e| parse_error("meta.json", e.line(), e.to_string()))?;
    if meta.directed {
        return Err(parse_error("meta.json", 1, "directed graphs are not supported"));
    }
    Ok(meta)
}

fn read_matrix(dir: &Path, file: &str, rows: usize, cols: usize, binary: bool) -> Result<Array2<f64>> {
    let text = read(dir, file)?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut count = 0;
    for (no, line) in lines(&text) {
        count += 1;
        if count > rows {
            return Err(parse_error(file, no, format!("more than {rows} rows")));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols {
            return Err(parse_error(file, no, format!("expected {cols} columns, found {}", fields.len())));
        }
        for field in fields {
            let v: f64 = parse_field(file, no, field, "number")?;
            if binary && v != 0.0 && v != 1.0 {
                return Err(parse_error(file, no, format!("label `{field}` is not 0 or 1")));
            }
            if !v.is_finite() {
                return Err(parse_error(file, no, format!("non-finite value `{field}`")));
            }
            values.push(v);
        }
    }
    if count != rows {
        return Err(parse_error(file, 0, format!("expected {rows} rows, found {count}")));
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("row count checked"))
}

fn read_edges(dir: &Path, n: usize) -> Result<Vec<(usize, usize, f64)>> {
    const FILE: &str = "edges.tsv";
    let text = read(dir, FILE)?;
    let mut edges: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for (no, line) in lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(parse_error(FILE, no, "expected `src<TAB>dst[<TAB>weight]`"));
        }
        let src: usize = parse_field(FILE, no, fields[0], "node id")?;
        let dst: usize = parse_field(FILE, no, fields[1], "node id")?;
        let weight: f64 = match fields.get(2) {
            Some(w) => parse_field(FILE, no, w, "weight")?,
            None => 1.0,
        };
        if src >= n || dst >= n {
            return Err(parse_error(FILE, no, format!("node id out of range for n = {n}")));
        }
        if src == dst {
            return Err(parse_error(FILE, no, "self-loop"));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(parse_error(FILE, no, format!("invalid weight {weight}")));
        }
        let key = (src.min(dst), src.max(dst));
        match edges.get(&key) {
            Some(&(w, first)) if w != weight => {
                return Err(parse_error(FILE, no, format!("edge {key:?} conflicts with line {first}")));
            }
            Some(_) => {}
            None => {
                edges.insert(key, (weight, no));
            }
        }
    }
    Ok(edges.into_iter().map(|((s, d), (w, _))| (s, d, w)).collect())
}

fn read_split(dir: &Path, n: usize) -> Result<Vec<SplitRole>> {
    const FILE: &str = "split.tsv";
    let text = read(dir, FILE)?;
    let mut split: Vec<Option<SplitRole>> = vec![None; n];
    for (no, line) in lines(&text) {
        let (id, role) = line.split_once('\t').ok_or_else(|| parse_error(FILE, no, "expected `node<TAB>role`"))?;
        let id: usize = parse_field(FILE, no, id, "node id")?;
        let role: SplitRole = parse_field(FILE, no, role, "split role")?;
        match split.get_mut(id) {
            None => return Err(parse_error(FILE, no, format!("node id {id} out of range"))),
            Some(Some(_)) => return Err(parse_error(FILE, no, format!("node {id} listed twice"))),
            Some(slot) => *slot = Some(role),
        }
    }
    split
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| parse_error(FILE, 0, format!("node {i} has no split"))))
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<LabeledGraph> {
    let meta = read_meta(dir)?;
    let features = read_matrix(dir, "features.tsv", meta.n, meta.d, false)?;
    let labels = read_matrix(dir, "labels.tsv", meta.n, meta.k, true)?;
    let edges = read_edges(dir, meta.n)?;
    let split = read_split(dir, meta.n)?;
    LabeledGraph::new(&edges, features, labels, split)
}

fn format_matrix(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push('\t');
            }
            write!(out, "{v}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

fn format_edges(edges: &[(usize, usize, f64)]) -> String {
    edges.iter().fold(String::new(), |mut out, (s, d, w)| {
        writeln!(out, "{s}\t{d}\t{w}").expect("write to string");
        out
    })
}

fn format_split(split: &[SplitRole]) -> String {
    split.iter().enumerate().fold(String::new(), |mut out, (i, r)| {
        writeln!(out, "{i}\t{}", r.as_str()).expect("write to string");
        out
    })
}

fn write_meta(dir: &Path, meta: &Meta) -> Result<()> {
    fs::write(dir.join("meta.json"), serde_json::to_string(meta)? + "\n")?;
    Ok(())
}

pub fn save_dataset(dir: &Path, graph: &LabeledGraph) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_meta(dir, &Meta { n: graph.n(), d: graph.d(), k: graph.k(), directed: false, structure: None })?;
    fs::write(dir.join("edges.tsv"), format_edges(&graph.edges()))?;
    fs::write(dir.join("features.tsv"), format_matrix(graph.features()))?;
    fs::write(dir.join("labels.tsv"), format_matrix(graph.labels()))?;
    fs::write(dir.join("split.tsv"), format_split(graph.split()))?;
    Ok(())
}

/// Off-diagonal nonzeros of a dense symmetric adjacency as `src < dst` edges.
fn dense_edges(a: &Array2<f64>) -> Vec<(usize, usize, f64)> {
    a.indexed_iter().filter(|&((i, j), &v)| i < j && v != 0.0).map(|((i, j), &v)| (i, j, v)).collect()
}

pub fn save_synthetic(dir: &Path, synthetic: &SyntheticGraph) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (n, d, k) = (synthetic.n_prime(), synthetic.features().ncols(), synthetic.labels().ncols());
    let structure = synthetic.structure_mode();
    write_meta(dir, &Meta { n, d, k, directed: false, structure: Some(structure) })?;
    let edges = synthetic.adjacency().map(dense_edges).unwrap_or_default();
    fs::write(dir.join("edges.tsv"), format_edges(&edges))?;
    fs::write(dir.join("features.tsv"), format_matrix(synthetic.features()))?;
    fs::write(dir.join("labels.tsv"), format_matrix(synthetic.labels()))?;
    fs::write(dir.join("split.tsv"), format_split(&vec![SplitRole::Train; n]))?;
    let adj = dir.join("adj.tsv");
    match synthetic.adjacency() {
        Some(a) => fs::write(adj, format_matrix(a))?,
        None if adj.exists() => fs::remove_file(adj)?,
        None => {}
    }
    Ok(())
}

pub fn load_synthetic(dir: &Path) -> Result<SyntheticGraph> {
    let meta = read_meta(dir)?;
    let features = read_matrix(dir, "features.tsv", meta.n, meta.d, false)?;
    let labels = read_matrix(dir, "labels.tsv", meta.n, meta.k, true)?;
    let structure = meta.structure.unwrap_or(if dir.join("adj.tsv").exists() {
        StructureMode::Learned
    } else {
        StructureMode::Graphless
    });
    let adjacency = match structure {
        StructureMode::Graphless => None,
        StructureMode::Learned => {
            let a = read_matrix(dir, "adj.tsv", meta.n, meta.n, false)?;
            for i in 0..meta.n {
                for j in 0..i {
                    if a[[i, j]] != a[[j, i]] {
                        return Err(parse_error("adj.tsv", i + 1, format!("entry ({i},{j}) differs from ({j},{i})")));
                    }
                }
            }
            let listed = read_edges(dir, meta.n)?;
            if listed != dense_edges(&a) {
                return Err(parse_error("edges.tsv", 0, "edge list disagrees with adj.tsv"));
            }
            Some(a)
        }
    };
    SyntheticGraph::new(features, labels, adjacency)
}

/// `outer,step,phase,loss` per record.
pub fn format_trace_csv(trace: &MatchTrace) -> String {
    let mut out = String::from("outer,step,phase,loss\n");
    for r in &trace.records {
        writeln!(out, "{},{},{},{}", r.outer, r.step, r.phase.as_str(), r.loss).expect("write to string");
    }
    out
}

/// Parses [`format_trace_csv`] output; per-class terms are not stored.
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRecord>> {
    const FILE: &str = "trace.csv";
    let mut records = Vec::new();
    for (no, line) in lines(text).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let [outer, step, phase, loss] = fields.as_slice() else {
            return Err(parse_error(FILE, no, "expected 4 columns"));
        };
        let phase = match *phase {
            "features" => Phase::Features,
            "structure" => Phase::Structure,
            other => return Err(parse_error(FILE, no, format!("unknown phase `{other}`"))),
        };
        records.push(TraceRecord {
            outer: parse_field(FILE, no, outer, "restart")?,
            step: parse_field(FILE, no, step, "step")?,
            phase,
            loss: parse_field(FILE, no, loss, "loss")?,
            class_losses: Vec::new(),
        });
    }
    Ok(records)
}

/// Comma-separated matrix with a header of column names.
pub fn format_csv(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planted::{make_planted_dataset, PlantedConfig};
    use ndarray::array;
    use tempfile::tempdir;

    fn write_toy(dir: &Path, edges: &str, labels: &str) {
        fs::write(dir.join("meta.json"), r#"{"n":3,"d":1,"k":2,"directed":false}"#).unwrap();
        fs::write(dir.join("edges.tsv"), edges).unwrap();
        fs::write(dir.join("features.tsv"), "0.5\n-1\n2\n").unwrap();
        fs::write(dir.join("labels.tsv"), labels).unwrap();
        fs::write(dir.join("split.tsv"), "0\ttrain\n1\tval\n2\ttest\n").unwrap();
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let g = make_planted_dataset(&PlantedConfig::new(50, 3, 0.3, 4)).unwrap().graph;
        let dir = tempdir().unwrap();
        save_dataset(dir.path(), &g).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), g);
        let first = fs::read(dir.path().join("features.tsv")).unwrap();
        save_dataset(dir.path(), &load_dataset(dir.path()).unwrap()).unwrap();
        assert_eq!(fs::read(dir.path().join("features.tsv")).unwrap(), first);
    }

    #[test]
    fn reversed_and_doubled_edges_are_canonicalized() {
        let dir = tempdir().unwrap();
        write_toy(dir.path(), "2\t0\t1\n1\t0\n0\t1\t1\n", "1\t0\n0\t1\n1\t1\n");
        let g = load_dataset(dir.path()).unwrap();
        assert_eq!(g.edges(), vec![(0, 1, 1.0), (0, 2, 1.0)]);
    }

    #[test]
    fn parse_errors_point_at_lines() {
        let dir = tempdir().unwrap();
        write_toy(dir.path(), "0\t1\t1\n", "1\t0\n0\t2\n1\t1\n");
        match load_dataset(dir.path()) {
            Err(Error::Parse { file, line, .. }) => assert_eq!((file.as_str(), line), ("labels.tsv", 2)),
            other => panic!("{other:?}"),
        }
        write_toy(dir.path(), "0\t1\t1\n1\t1\t1\n", "1\t0\n0\t1\n1\t1\n");
        match load_dataset(dir.path()) {
            Err(Error::Parse { file, line, .. }) => assert_eq!((file.as_str(), line), ("edges.tsv", 2)),
            other => panic!("{other:?}"),
        }
        write_toy(dir.path(), "0\t1\t1\n1\t0\t0.5\n", "1\t0\n0\t1\n1\t1\n");
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { line: 2, .. })));
        write_toy(dir.path(), "", "1\t0\n0\t1\n");
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { .. })));
        fs::remove_file(dir.path().join("split.tsv")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn synthetic_round_trips() {
        let dir = tempdir().unwrap();
        let graphless = SyntheticGraph::new(array![[0.1, 0.2]], array![[1.0, 0.0]], None).unwrap();
        save_synthetic(dir.path(), &graphless).unwrap();
        assert!(!dir.path().join("adj.tsv").exists());
        assert_eq!(load_synthetic(dir.path()).unwrap(), graphless);

        let adj = array![[1.0, 0.0, 0.7], [0.0, 1.0, 0.0], [0.7, 0.0, 1.0]];
        let learned = SyntheticGraph::new(
            array![[1.0 / 3.0], [2e-17], [-5.5]],
            array![[1.0], [0.0], [1.0]],
            Some(adj),
        )
        .unwrap();
        save_synthetic(dir.path(), &learned).unwrap();
        let back = load_synthetic(dir.path()).unwrap();
        assert_eq!(back, learned);
        assert_eq!(back.adjacency().unwrap()[[0, 1]], 0.0);
    }

    #[test]
    fn asymmetric_adjacency_is_rejected() {
        let dir = tempdir().unwrap();
        let s = SyntheticGraph::new(array![[0.0], [1.0]], array![[1.0], [1.0]], Some(array![[1.0, 0.6], [0.6, 1.0]]))
            .unwrap();
        save_synthetic(dir.path(), &s).unwrap();
        fs::write(dir.path().join("adj.tsv"), "1\t0.6\n0.5\t1\n").unwrap();
        assert!(matches!(load_synthetic(dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn trace_csv_round_trips() {
        let trace = MatchTrace {
            records: vec![
                TraceRecord { outer: 0, step: 0, phase: Phase::Features, loss: 1.0 / 7.0, class_losses: vec![] },
                TraceRecord { outer: 0, step: 1, phase: Phase::Structure, loss: 3e-300, class_losses: vec![] },
            ],
            wall_seconds: 0.0,
        };
        assert_eq!(parse_trace_csv(&format_trace_csv(&trace)).unwrap(), trace.records);
    }
}
