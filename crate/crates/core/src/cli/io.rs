//! CSV inputs. Nodes: `node_id,z,y,p`. Edges: `u,v`, undirected.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::netgraph::InterferenceGraph;

#[derive(Debug, Deserialize)]
struct NodeRow {
    node_id: String,
    z: u8,
    y: f64,
    p: f64,
}

#[derive(Debug, Deserialize)]
struct EdgeRow {
    u: String,
    v: String,
}

/// Graph plus the external node ids, in input order.
#[derive(Debug)]
pub struct LoadedInput {
    pub graph: InterferenceGraph,
    pub ids: Vec<String>,
    /// SHA-256 of the node file bytes followed by the edge file bytes.
    pub sha256: String,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path, bytes: &[u8], expected: &[&str]) -> Result<csv::Reader<std::io::Cursor<Vec<u8>>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(std::io::Cursor::new(bytes.to_vec()));
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Schema(format!(
            "{}: header must be `{}`, found `{}`",
            path.display(),
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(rdr)
}

fn row_line(e: &csv::Error, fallback: usize) -> usize {
    e.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

pub fn load_input(nodes_path: &Path, edges_path: &Path) -> Result<LoadedInput> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())));
    let node_bytes = read(nodes_path)?;
    let edge_bytes = read(edges_path)?;
    let mut hasher = Sha256::new();
    hasher.update(&node_bytes);
    hasher.update(&edge_bytes);
    let sha256 = hex::encode(hasher.finalize());

    let mut rdr = reader(nodes_path, &node_bytes, &["node_id", "z", "y", "p"])?;
    let mut ids = Vec::new();
    let mut index = HashMap::new();
    let (mut z, mut y, mut p) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.deserialize::<NodeRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| parse_err(nodes_path, row_line(&e, line), e.to_string()))?;
        if row.z > 1 {
            return Err(parse_err(nodes_path, line, format!("z must be 0 or 1, got {}", row.z)));
        }
        if !row.y.is_finite() {
            return Err(parse_err(nodes_path, line, "y must be finite"));
        }
        if index.insert(row.node_id.clone(), ids.len()).is_some() {
            return Err(parse_err(nodes_path, line, format!("duplicate node_id {:?}", row.node_id)));
        }
        ids.push(row.node_id);
        z.push(row.z == 1);
        y.push(row.y);
        p.push(row.p);
    }
    if ids.is_empty() {
        return Err(Error::Schema(format!("{}: no nodes", nodes_path.display())));
    }

    let mut rdr = reader(edges_path, &edge_bytes, &["u", "v"])?;
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.deserialize::<EdgeRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| parse_err(edges_path, row_line(&e, line), e.to_string()))?;
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| parse_err(edges_path, line, format!("unknown node_id {id:?}")))
        };
        let (u, v) = (lookup(&row.u)?, lookup(&row.v)?);
        if u == v {
            return Err(parse_err(edges_path, line, format!("self-loop on {:?}", row.u)));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(parse_err(
                edges_path,
                line,
                format!("duplicate edge {:?}-{:?}", row.u, row.v),
            ));
        }
        edges.push((u, v));
    }
    let graph = InterferenceGraph::new(ids.len(), &edges, z, y, p)?;
    Ok(LoadedInput { graph, ids, sha256 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "n.csv", "node_id,z,y,p\na,1,1.5,0.5\nb,0,0.2,0.5\nc,0,0.1,0.5\n");
        let e = write(dir.path(), "e.csv", "u,v\na,b\nb,c\n");
        let inp = load_input(&n, &e).unwrap();
        assert_eq!(inp.graph.n(), 3);
        assert_eq!(inp.graph.edge_count(), 2);
        assert_eq!(inp.ids, ["a", "b", "c"]);
        assert_eq!(inp.sha256.len(), 64);
    }

    #[test]
    fn line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "n.csv", "node_id,z,y,p\na,1,1.5,0.5\nb,0,oops,0.5\n");
        let e = write(dir.path(), "e.csv", "u,v\n");
        match load_input(&n, &e) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let n = write(dir.path(), "n.csv", "node_id,z,y,p\na,1,1.5,0.5\nb,0,1,0.5\n");
        let e = write(dir.path(), "e.csv", "u,v\na,b\nb,a\n");
        match load_input(&n, &e) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "n.csv", "id,z,y,p\na,1,1.5,0.5\n");
        let e = write(dir.path(), "e.csv", "u,v\n");
        assert!(matches!(load_input(&n, &e), Err(Error::Schema(_))));
    }
}
