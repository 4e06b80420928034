use std::fmt::Write as _;
use std::path::Path;

use super::{Explanation, Graph};
use crate::error::{Error, Result};

const HEADER: &str = "digraph explanation {\n  node [shape=circle];\n  edge [dir=none];\n";
const FOOTER: &str = "}\n";

/// Renders the graph as DOT text with explained nodes filled and explained
/// edges drawn red. Output depends only on the inputs.
pub fn render_dot(g: &Graph, e: &Explanation) -> Result<String> {
    e.validate(g)?;
    let mut out = String::from(HEADER);
    for i in 0..g.node_count() {
        let ty = g.node_types()[i];
        if e.node_mask[i] {
            let _ = writeln!(
                out,
                "  n{i} [label=\"{i}\", type={ty}, explained=true, style=filled, fillcolor=orange];"
            );
        } else {
            let _ = writeln!(out, "  n{i} [label=\"{i}\", type={ty}];");
        }
    }
    for (k, &(a, b)) in g.edges().iter().enumerate() {
        if e.edge_mask[k] {
            let _ = writeln!(out, "  n{a} -> n{b} [explained=true, color=red, penwidth=2.5];");
        } else {
            let _ = writeln!(out, "  n{a} -> n{b};");
        }
    }
    out.push_str(FOOTER);
    Ok(out)
}

pub fn export_dot(g: &Graph, e: &Explanation, path: &Path) -> Result<()> {
    let text = render_dot(g, e)?;
    std::fs::write(path, text).map_err(|err| Error::io(path, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn empty_graph_is_header_and_footer() {
        let g = Graph::empty(3, 0);
        let text = render_dot(&g, &Explanation::empty(&g)).unwrap();
        assert_eq!(text, format!("{HEADER}{FOOTER}"));
    }

    #[test]
    fn triangle_with_one_explained_edge() {
        let g = Graph::new(3, vec![(0, 1), (1, 2), (0, 2)], Array2::zeros((3, 1)), vec![0; 3], 0).unwrap();
        let e = Explanation::from_edges(&g, vec![false, true, false], -0.1).unwrap();
        let text = render_dot(&g, &e).unwrap();
        let is_node = |l: &str| {
            let l = l.trim_start();
            l.starts_with('n') && l[1..].starts_with(|c: char| c.is_ascii_digit()) && !l.contains("->")
        };
        let node_stmts = text.lines().filter(|l| is_node(l)).count();
        let edge_stmts = text.lines().filter(|l| l.contains("->")).count();
        let highlighted = text.lines().filter(|l| l.contains("->") && l.contains("explained=true")).count();
        assert_eq!((node_stmts, edge_stmts, highlighted), (3, 3, 1));
        assert!(text.starts_with("digraph"));
        assert!(text.ends_with("}\n"));
    }

    #[test]
    fn export_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::new(4, vec![(0, 1), (2, 3)], Array2::zeros((4, 1)), vec![0, 1, 0, 1], 0).unwrap();
        let e = Explanation::from_edges(&g, vec![true, false], 0.0).unwrap();
        let (a, b) = (dir.path().join("a.dot"), dir.path().join("b.dot"));
        export_dot(&g, &e, &a).unwrap();
        export_dot(&g, &e, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let g = Graph::empty(1, 0);
        let err = export_dot(&g, &Explanation::empty(&g), Path::new("/nonexistent/dir/x.dot")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
