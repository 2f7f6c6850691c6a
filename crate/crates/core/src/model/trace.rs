use std::fmt::Write as _;

use crate::tensor::Shape;

/// One executed layer, in the column layout of the architecture tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRow {
    /// `overcomplete`, `undercomplete`, `fusion` or `output`.
    pub branch: String,
    /// `Encoder`, `Decoder`, or a fusion label.
    pub block: String,
    pub layer: String,
    pub kernel: String,
    pub filters: Option<usize>,
    pub padding: Option<usize>,
    /// (channels, height, width)
    pub input: [usize; 3],
    pub output: [usize; 3],
}

/// Shape log filled in by a traced forward pass.
#[derive(Clone, Debug, Default)]
pub struct ShapeTrace {
    pub rows: Vec<TraceRow>,
}

pub(crate) fn chw(s: Shape) -> [usize; 3] {
    [s.c, s.h, s.w]
}

impl ShapeTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn branch_rows<'a>(&'a self, branch: &'a str) -> impl Iterator<Item = &'a TraceRow> + 'a {
        self.rows.iter().filter(move |r| r.branch == branch)
    }

    pub fn render(&self) -> String {
        let fmt_shape = |s: &[usize; 3]| format!("{} x {} x {}", s[0], s[1], s[2]);
        let dash = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:<9} {:<12} {:<24} {:>7} {:>7}  {:<18} {:<18}",
            "Branch", "Block", "Layer", "Kernel size/Scale Factor", "Filters", "Padding", "Input size", "Output size"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:<9} {:<12} {:<24} {:>7} {:>7}  {:<18} {:<18}",
                r.branch,
                r.block,
                r.layer,
                r.kernel,
                dash(r.filters),
                dash(r.padding),
                fmt_shape(&r.input),
                fmt_shape(&r.output)
            );
        }
        out
    }
}
