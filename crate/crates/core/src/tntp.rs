//! Readers for the TNTP text formats used by public transportation-network
//! datasets: `<name>_net.tntp` (links), `<name>_flow.tntp` (link volumes)
//! and `<name>_node.tntp` (node coordinates).
//!
//! Node ids are 1-based in the files and 0-based everywhere else.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const KEY_NODES: &str = "NUMBER OF NODES";
pub const KEY_LINKS: &str = "NUMBER OF LINKS";
pub const KEY_FIRST_THRU: &str = "FIRST THRU NODE";
pub const KEY_ZONES: &str = "NUMBER OF ZONES";
const KEY_END: &str = "END OF METADATA";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub init_node: usize,
    pub term_node: usize,
    pub capacity: f64,
    pub length: f64,
    pub free_flow_time: f64,
    pub b: f64,
    pub power: f64,
    pub speed: f64,
    pub toll: f64,
    pub link_type: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawNetwork {
    /// Header key (without angle brackets) to its raw value, in file order
    /// of appearance. Unknown keys are kept.
    pub metadata: BTreeMap<String, String>,
    pub links: Vec<LinkRecord>,
}

impl RawNetwork {
    fn meta_int(&self, key: &str) -> Option<i64> {
        self.metadata
            .get(key)
            .and_then(|v| v.split_whitespace().next()?.parse().ok())
    }

    pub fn num_nodes(&self) -> Option<usize> {
        self.meta_int(KEY_NODES).map(|v| v as usize)
    }

    pub fn num_links(&self) -> Option<usize> {
        self.meta_int(KEY_LINKS).map(|v| v as usize)
    }

    /// 1-based id of the first node that may carry through traffic; ids
    /// below it are zone centroids.
    pub fn first_thru_node(&self) -> Option<usize> {
        self.meta_int(KEY_FIRST_THRU).map(|v| v as usize)
    }

    pub fn num_zones(&self) -> Option<usize> {
        self.meta_int(KEY_ZONES).map(|v| v as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub from: usize,
    pub to: usize,
    pub volume: f64,
    pub cost: f64,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Whitespace-split fields of a data row, without the `;` terminator.
fn row_fields(line: &str) -> Vec<&str> {
    let body = line.trim();
    let body = body.strip_suffix(';').unwrap_or(body);
    body.split_whitespace().filter(|f| *f != ";").collect()
}

fn parse_num(field: &str, line: usize, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("{what}: '{field}' is not a number")))
}

fn parse_node_id(field: &str, line: usize, what: &str) -> Result<usize> {
    let v: usize = field
        .parse()
        .map_err(|_| parse_err(line, format!("{what}: '{field}' is not a node id")))?;
    v.checked_sub(1)
        .ok_or_else(|| parse_err(line, format!("{what}: node ids are 1-based, got 0")))
}

pub fn parse_net(text: &str) -> Result<RawNetwork> {
    let mut metadata = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    let mut saw_end = false;
    for (idx, line) in lines.by_ref() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('~') {
            continue;
        }
        let Some(rest) = t.strip_prefix('<') else {
            return Err(parse_err(
                idx + 1,
                format!("expected metadata line, got '{t}'"),
            ));
        };
        let Some((key, value)) = rest.split_once('>') else {
            return Err(parse_err(idx + 1, "unterminated metadata key"));
        };
        let key = key.trim().to_ascii_uppercase();
        if key == KEY_END {
            saw_end = true;
            break;
        }
        metadata.insert(key, value.trim().to_string());
    }
    if !saw_end {
        return Err(parse_err(text.lines().count(), "missing <END OF METADATA>"));
    }

    let mut links = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('~') {
            continue;
        }
        let f = row_fields(t);
        if f.len() < 10 {
            return Err(parse_err(
                lineno,
                format!("link row has {} fields, need 10", f.len()),
            ));
        }
        let link_type = f[9]
            .parse::<i64>()
            .or_else(|_| f[9].parse::<f64>().map(|v| v as i64))
            .map_err(|_| parse_err(lineno, format!("link type: '{}' is not a number", f[9])))?;
        links.push(LinkRecord {
            init_node: parse_node_id(f[0], lineno, "init node")?,
            term_node: parse_node_id(f[1], lineno, "term node")?,
            capacity: parse_num(f[2], lineno, "capacity")?,
            length: parse_num(f[3], lineno, "length")?,
            free_flow_time: parse_num(f[4], lineno, "free flow time")?,
            b: parse_num(f[5], lineno, "b")?,
            power: parse_num(f[6], lineno, "power")?,
            speed: parse_num(f[7], lineno, "speed")?,
            toll: parse_num(f[8], lineno, "toll")?,
            link_type,
        });
    }
    let net = RawNetwork { metadata, links };
    if let Some(declared) = net.num_links() {
        if declared != net.links.len() {
            return Err(parse_err(
                text.lines().count(),
                format!(
                    "header declares {declared} links, found {}",
                    net.links.len()
                ),
            ));
        }
    }
    Ok(net)
}

/// Serializes a network back to TNTP text that [`parse_net`] reads into an
/// identical record list.
pub fn write_net(net: &RawNetwork) -> String {
    let mut out = String::new();
    for (k, v) in &net.metadata {
        let _ = writeln!(out, "<{k}> {v}");
    }
    let _ = writeln!(out, "<{KEY_END}>");
    out.push('\n');
    out.push_str("~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;\n");
    for l in &net.links {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t;",
            l.init_node + 1,
            l.term_node + 1,
            l.capacity,
            l.length,
            l.free_flow_time,
            l.b,
            l.power,
            l.speed,
            l.toll,
            l.link_type
        );
    }
    out
}

/// True for a header row such as `From To Volume Cost` or `Node X Y ;`.
fn is_header(fields: &[&str]) -> bool {
    fields.first().is_some_and(|f| f.parse::<f64>().is_err())
}

pub fn parse_flow(text: &str) -> Result<Vec<FlowRecord>> {
    let mut out = Vec::new();
    let mut data_started = false;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('~') {
            continue;
        }
        let f = row_fields(t);
        if !data_started && is_header(&f) {
            continue;
        }
        data_started = true;
        if f.len() < 3 {
            return Err(parse_err(
                lineno,
                format!("flow row has {} fields, need at least 3", f.len()),
            ));
        }
        let volume = parse_num(f[2], lineno, "volume")?;
        if volume < 0.0 || !volume.is_finite() {
            return Err(parse_err(lineno, format!("invalid volume {volume}")));
        }
        let cost = match f.get(3) {
            Some(c) => parse_num(c, lineno, "cost")?,
            None => 0.0,
        };
        out.push(FlowRecord {
            from: parse_node_id(f[0], lineno, "from")?,
            to: parse_node_id(f[1], lineno, "to")?,
            volume,
            cost,
        });
    }
    Ok(out)
}

/// Node coordinates as an `n × 2` matrix ordered by node id. Ids must be
/// exactly `1..=n`.
pub fn parse_nodes(text: &str) -> Result<Tensor> {
    let mut rows = Vec::new();
    let mut data_started = false;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('~') {
            continue;
        }
        let f = row_fields(t);
        if !data_started && is_header(&f) {
            continue;
        }
        data_started = true;
        if f.len() < 3 {
            return Err(parse_err(
                lineno,
                format!("node row has {} fields, need 3", f.len()),
            ));
        }
        let id = parse_node_id(f[0], lineno, "node")?;
        let x = parse_num(f[1], lineno, "x")?;
        let y = parse_num(f[2], lineno, "y")?;
        rows.push((id, x, y, lineno));
    }
    coords_by_id(rows)
}

/// Node coordinates from a GeoJSON `FeatureCollection` of points. The node
/// id is read from the `id`, `node` or `node_id` property; without one,
/// features are numbered in file order. Errors report the 1-based feature
/// index as the line.
pub fn parse_nodes_geojson(text: &str) -> Result<Tensor> {
    let doc: serde_json::Value = serde_json::from_str(text)?;
    let features = doc
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| parse_err(1, "GeoJSON without a features array"))?;
    let mut rows = Vec::with_capacity(features.len());
    for (idx, feat) in features.iter().enumerate() {
        let k = idx + 1;
        let coords = feat
            .pointer("/geometry/coordinates")
            .and_then(|c| c.as_array())
            .filter(|c| c.len() >= 2)
            .ok_or_else(|| parse_err(k, "feature is not a point"))?;
        let num = |v: &serde_json::Value| {
            v.as_f64()
                .ok_or_else(|| parse_err(k, "non-numeric coordinate"))
        };
        let props = feat.get("properties");
        let id_value = ["id", "node", "node_id", "ID", "NODE"]
            .iter()
            .find_map(|key| props.and_then(|p| p.get(*key)));
        let id = match id_value {
            None => idx,
            Some(v) => {
                let raw = match v {
                    serde_json::Value::String(s) => s.trim().to_string(),
                    other => other.to_string(),
                };
                let raw = raw.strip_suffix(".0").unwrap_or(&raw).to_string();
                parse_node_id(&raw, k, "node")?
            }
        };
        rows.push((id, num(&coords[0])?, num(&coords[1])?, k));
    }
    coords_by_id(rows)
}

fn coords_by_id(rows: Vec<(usize, f64, f64, usize)>) -> Result<Tensor> {
    let mut by_id: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for (id, x, y, lineno) in rows {
        if let Some((_, _, first)) = by_id.insert(id, (x, y, lineno)) {
            return Err(parse_err(
                lineno,
                format!("duplicate node {} (first seen on line {first})", id + 1),
            ));
        }
    }
    let n = by_id.len();
    let mut coords = Tensor::zeros(n, 2);
    for (expected, (&id, &(x, y, lineno))) in by_id.iter().enumerate() {
        if id != expected {
            return Err(parse_err(
                lineno,
                format!("node ids are not contiguous: missing node {}", expected + 1),
            ));
        }
        coords.set(id, 0, x);
        coords.set(id, 1, y);
    }
    Ok(coords)
}

/// Preprocessing applied when turning raw files into a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    /// Drop links whose flow is zero or missing.
    pub drop_nonpositive_flow: bool,
    /// Drop links touching zone centroids (node ids below FIRST THRU NODE).
    pub drop_zone_connectors: bool,
    /// Remove nodes left without edges and re-index densely.
    pub drop_isolated_nodes: bool,
    /// Z-score each coordinate axis over the retained nodes.
    pub standardize_coordinates: bool,
}

impl FilterOptions {
    /// Keep every link and node.
    pub fn none() -> Self {
        FilterOptions {
            drop_nonpositive_flow: false,
            drop_zone_connectors: false,
            drop_isolated_nodes: false,
            standardize_coordinates: true,
        }
    }

    /// The default dataset filter.
    pub fn road_network() -> Self {
        FilterOptions {
            drop_nonpositive_flow: true,
            drop_zone_connectors: true,
            drop_isolated_nodes: true,
            standardize_coordinates: true,
        }
    }

    fn any(&self) -> bool {
        self.drop_nonpositive_flow || self.drop_zone_connectors || self.drop_isolated_nodes
    }
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self::road_network()
    }
}

/// Joins links, flows and coordinates into a [`Graph`] whose edge weights
/// are link volumes.
pub fn assemble_graph(
    net: &RawNetwork,
    flows: &[FlowRecord],
    coords: &Tensor,
    filter: &FilterOptions,
) -> Result<Graph> {
    let mut link_index: HashMap<(usize, usize), usize> = HashMap::with_capacity(net.links.len());
    for (i, l) in net.links.iter().enumerate() {
        link_index.entry((l.init_node, l.term_node)).or_insert(i);
    }
    let mut volume: Vec<Option<f64>> = vec![None; net.links.len()];
    for f in flows {
        let Some(&i) = link_index.get(&(f.from, f.to)) else {
            return Err(Error::Dataset(format!(
                "flow references unknown edge ({}, {})",
                f.from + 1,
                f.to + 1
            )));
        };
        if volume[i].replace(f.volume).is_some() {
            return Err(Error::Dataset(format!(
                "two flow rows for edge ({}, {})",
                f.from + 1,
                f.to + 1
            )));
        }
    }

    let max_id = net
        .links
        .iter()
        .map(|l| l.init_node.max(l.term_node))
        .max()
        .map_or(0, |m| m + 1);
    let n_declared = net.num_nodes().unwrap_or(max_id).max(max_id);
    if coords.rows() < n_declared {
        return Err(Error::Dataset(format!(
            "coordinates for {} nodes, network uses {n_declared}",
            coords.rows()
        )));
    }
    let zone_cut = if filter.drop_zone_connectors {
        net.first_thru_node().unwrap_or(1).saturating_sub(1)
    } else {
        0
    };

    let mut kept: Vec<(usize, usize, f64)> = Vec::new();
    let mut seen = HashMap::new();
    for (i, l) in net.links.iter().enumerate() {
        let (s, t) = (l.init_node, l.term_node);
        if filter.any() {
            if s == t || s < zone_cut || t < zone_cut {
                continue;
            }
            if seen.insert((s, t), i).is_some() {
                log::warn!("dropping parallel link {} -> {}", s + 1, t + 1);
                continue;
            }
        }
        let w = match volume[i] {
            Some(v) if v > 0.0 || !filter.drop_nonpositive_flow => v,
            Some(_) => continue,
            None if filter.drop_nonpositive_flow => continue,
            None => {
                return Err(Error::Dataset(format!(
                    "edge ({}, {}) has no flow record",
                    s + 1,
                    t + 1
                )));
            }
        };
        kept.push((s, t, w));
    }

    let n_raw = if filter.drop_isolated_nodes {
        n_declared
    } else {
        coords.rows().max(n_declared)
    };
    let mut used = vec![!filter.drop_isolated_nodes; n_raw];
    for &(s, t, _) in &kept {
        used[s] = true;
        used[t] = true;
    }
    let mut new_id = vec![usize::MAX; n_raw];
    let mut node_rows = Vec::new();
    for (old, _) in used.iter().enumerate().filter(|(_, u)| **u) {
        new_id[old] = node_rows.len();
        node_rows.push(old);
    }
    let mut features = coords.gather_rows(&node_rows);
    if filter.standardize_coordinates {
        zscore_columns(&mut features);
    }
    let edges = kept
        .iter()
        .map(|&(s, t, _)| (new_id[s], new_id[t]))
        .collect();
    let weights = kept.iter().map(|&(_, _, w)| w).collect();
    Graph::new(node_rows.len(), edges, weights, features)
}

fn zscore_columns(t: &mut Tensor) {
    let n = t.rows();
    if n == 0 {
        return;
    }
    for c in 0..t.cols() {
        let mean = (0..n).map(|r| t.get(r, c)).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (t.get(r, c) - mean).powi(2)).sum::<f64>() / n as f64;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        for r in 0..n {
            let v = (t.get(r, c) - mean) / std;
            t.set(r, c, v);
        }
    }
}

/// Parsed contents of a dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub net: RawNetwork,
    pub flows: Vec<FlowRecord>,
    pub coords: Tensor,
    pub files: [PathBuf; 3],
}

impl Dataset {
    pub fn graph(&self, filter: &FilterOptions) -> Result<Graph> {
        assemble_graph(&self.net, &self.flows, &self.coords, filter)
    }
}

fn find_file(dir: &Path, suffixes: &[&str]) -> Result<PathBuf> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut hits: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.to_ascii_lowercase())
                .is_some_and(|n| suffixes.iter().any(|s| n.ends_with(s)))
        })
        .collect();
    hits.sort();
    hits.into_iter().next().ok_or_else(|| {
        Error::Dataset(format!(
            "no file ending in {} under {}",
            suffixes.join(" / "),
            dir.display()
        ))
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads `<name>_net.tntp`, `<name>_flow.tntp` and node coordinates from
/// `dir`. Coordinates come from `<name>_node.tntp`, or from a
/// `*nodes.geojson` file when no TNTP node file exists.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let net_path = find_file(dir, &["_net.tntp"])?;
    let flow_path = find_file(dir, &["_flow.tntp"])?;
    let node_path = find_file(dir, &["_node.tntp", "_nodes.tntp"])
        .or_else(|_| find_file(dir, &["nodes.geojson"]))?;
    let with_line = |p: &Path, e: Error| match e {
        Error::Parse { line, msg } => Error::Dataset(format!("{}:{line}: {msg}", p.display())),
        other => other,
    };
    let net = parse_net(&read(&net_path)?).map_err(|e| with_line(&net_path, e))?;
    let flows = parse_flow(&read(&flow_path)?).map_err(|e| with_line(&flow_path, e))?;
    let node_text = read(&node_path)?;
    let is_geojson = node_path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("geojson"));
    let coords = if is_geojson {
        parse_nodes_geojson(&node_text)
    } else {
        parse_nodes(&node_text)
    }
    .map_err(|e| with_line(&node_path, e))?;
    let name = net_path
        .file_name()
        .and_then(|n| n.to_str())
        .map(|n| {
            n.trim_end_matches(".tntp")
                .trim_end_matches("_net")
                .to_string()
        })
        .unwrap_or_default();
    Ok(Dataset {
        name,
        net,
        flows,
        coords,
        files: [net_path, flow_path, node_path],
    })
}
