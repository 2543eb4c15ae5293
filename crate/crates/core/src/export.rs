//! Graph exports of an explanation: DOT (filtered for display), GraphML and
//! JSON (unfiltered, carrying the display threshold as metadata).

use std::fmt::Write as _;
use std::path::Path;

use crate::explanation::ExplanationGraph;
use crate::network::edge_list;

/// Default display threshold: weaker edges are left out of DOT output.
pub const DEFAULT_VIZ_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    GraphMl,
    Json,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Dot => "dot",
            ExportFormat::GraphMl => "graphml",
            ExportFormat::Json => "json",
        }
    }
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(ExportFormat::Dot),
            "graphml" => Ok(ExportFormat::GraphMl),
            "json" => Ok(ExportFormat::Json),
            other => Err(format!("unknown export format '{other}'")),
        }
    }
}

fn dot_id(s: &str) -> String {
    let escaped = s.replace('\\', "\\\\").replace('"', "\\\"");
    format!("\"{escaped}\"")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// Undirected DOT graph. Edges with `|w| < viz_threshold` are omitted. Each
/// edge carries `weight` (`|w|`), a signed `label`, `penwidth` scaled by `|w|`
/// and a sign class; positive edges are drawn green and negative ones red.
pub fn to_dot(g: &ExplanationGraph, viz_threshold: f64) -> String {
    let names = g.network.node_names();
    let out_idx = g.network.output_index();
    let mut s = String::new();
    s.push_str("graph explanation {\n");
    let _ = writeln!(s, "  graph [viz_threshold=\"{viz_threshold}\"];");
    s.push_str("  node [shape=circle];\n");
    for (idx, name) in names.iter().enumerate() {
        if idx == out_idx {
            let _ = writeln!(s, "  {} [shape=doublecircle];", dot_id(name));
        } else {
            let _ = writeln!(s, "  {};", dot_id(name));
        }
    }
    for e in edge_list(&g.network, viz_threshold) {
        let (sign, colour) = if e.weight > 0.0 {
            ("positive", "darkgreen")
        } else {
            ("negative", "red")
        };
        let _ = writeln!(
            s,
            "  {} -- {} [weight={:.6}, label=\"{:.3}\", penwidth={:.3}, color={}, class={}];",
            dot_id(&names[e.i]),
            dot_id(&names[e.j]),
            e.weight.abs(),
            e.weight,
            1.0 + 5.0 * e.weight.abs(),
            colour,
            sign,
        );
    }
    s.push_str("}\n");
    s
}

/// GraphML with every nonzero edge and the display threshold as graph data.
pub fn to_graphml(g: &ExplanationGraph, viz_threshold: f64) -> String {
    let names = g.network.node_names();
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
    s.push_str("  <key id=\"viz_threshold\" for=\"graph\" attr.name=\"viz_threshold\" attr.type=\"double\"/>\n");
    s.push_str("  <key id=\"lambda\" for=\"graph\" attr.name=\"lambda\" attr.type=\"double\"/>\n");
    s.push_str("  <key id=\"name\" for=\"node\" attr.name=\"name\" attr.type=\"string\"/>\n");
    s.push_str("  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"double\"/>\n");
    s.push_str("  <graph id=\"explanation\" edgedefault=\"undirected\">\n");
    let _ = writeln!(s, "    <data key=\"viz_threshold\">{viz_threshold:?}</data>");
    let _ = writeln!(s, "    <data key=\"lambda\">{:?}</data>", g.metadata.lambda);
    for (idx, name) in names.iter().enumerate() {
        let _ = writeln!(
            s,
            "    <node id=\"n{idx}\"><data key=\"name\">{}</data></node>",
            xml_escape(name)
        );
    }
    for (k, e) in edge_list(&g.network, 0.0).iter().enumerate() {
        let _ = writeln!(
            s,
            "    <edge id=\"e{k}\" source=\"n{}\" target=\"n{}\"><data key=\"weight\">{:?}</data></edge>",
            e.i, e.j, e.weight
        );
    }
    s.push_str("  </graph>\n</graphml>\n");
    s
}

pub fn render(g: &ExplanationGraph, format: ExportFormat, viz_threshold: f64) -> String {
    match format {
        ExportFormat::Dot => to_dot(g, viz_threshold),
        ExportFormat::GraphMl => to_graphml(g, viz_threshold),
        ExportFormat::Json => g.to_json_with_threshold(Some(viz_threshold)),
    }
}

pub fn export_graph(
    g: &ExplanationGraph,
    format: ExportFormat,
    viz_threshold: f64,
    path: &Path,
) -> std::io::Result<()> {
    std::fs::write(path, render(g, format, viz_threshold))
}
