use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{GraphBuilder, NodeId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Vanilla,
    Gru,
    Lstm,
}

impl CellKind {
    pub fn has_cell_state(self) -> bool {
        matches!(self, CellKind::Lstm)
    }

    /// Gate suffixes; each gate owns `wx_<g>`, `wh_<g>`, `b_<g>`.
    pub(crate) fn gates(self) -> &'static [&'static str] {
        match self {
            CellKind::Vanilla => &["h"],
            CellKind::Gru => &["z", "r", "h"],
            CellKind::Lstm => &["i", "f", "o", "g"],
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Vanilla => "vanilla",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" | "rnn" => Ok(CellKind::Vanilla),
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::invalid(format!("unknown cell `{other}`"))),
        }
    }
}

pub(crate) fn wx(g: &str) -> String {
    format!("cell.wx_{g}")
}

pub(crate) fn wh(g: &str) -> String {
    format!("cell.wh_{g}")
}

pub(crate) fn bias(g: &str) -> String {
    format!("cell.b_{g}")
}

/// Pre-activation `x W_x + h W_h + b` for one gate.
fn gate(gb: &mut GraphBuilder, g: &str, x: NodeId, h: NodeId) -> NodeId {
    let wx = gb.leaf(&wx(g));
    let wh = gb.leaf(&wh(g));
    let b = gb.leaf(&bias(g));
    let a = gb.matmul(x, wx);
    let r = gb.matmul(h, wh);
    let s = gb.add(a, r);
    gb.add(s, b)
}

/// One recurrent step inside a graph. Returns `(h, c)`; `c` is only
/// present for LSTM.
pub(crate) fn step(
    gb: &mut GraphBuilder,
    kind: CellKind,
    x: NodeId,
    h: NodeId,
    c: Option<NodeId>,
) -> (NodeId, Option<NodeId>) {
    match kind {
        CellKind::Vanilla => {
            let a = gate(gb, "h", x, h);
            (gb.tanh(a), None)
        }
        CellKind::Gru => {
            let za = gate(gb, "z", x, h);
            let z = gb.sigmoid(za);
            let ra = gate(gb, "r", x, h);
            let r = gb.sigmoid(ra);
            let rh = gb.mul(r, h);
            let ca = gate(gb, "h", x, rh);
            let cand = gb.tanh(ca);
            // h' = (1 - z) cand + z h
            let d = gb.sub(h, cand);
            let zd = gb.mul(z, d);
            (gb.add(cand, zd), None)
        }
        CellKind::Lstm => {
            let c = c.expect("lstm step needs a cell state");
            let ia = gate(gb, "i", x, h);
            let i = gb.sigmoid(ia);
            let fa = gate(gb, "f", x, h);
            let f = gb.sigmoid(fa);
            let oa = gate(gb, "o", x, h);
            let o = gb.sigmoid(oa);
            let ga = gate(gb, "g", x, h);
            let g = gb.tanh(ga);
            let fc = gb.mul(f, c);
            let ig = gb.mul(i, g);
            let c2 = gb.add(fc, ig);
            let tc = gb.tanh(c2);
            (gb.mul(o, tc), Some(c2))
        }
    }
}
