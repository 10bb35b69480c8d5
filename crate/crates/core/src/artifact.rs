//! Controller (`QSC1`) and decision-tree (`QST1`) files.
//!
//! Both start with a line-oriented text header. `QSC1` continues after a
//! `data` line with one byte per cell (the mode-set bits, row-major) and, for
//! reachability, one little-endian `u32` per cell holding `J~`
//! (`0xFFFFFFFF` = unbounded). `QST1` lists preorder nodes as `N axis t` or
//! `L mode`. Writing what was read reproduces the input byte for byte.

use std::io::{BufRead, Write};

use crate::determinize::{DecisionTree, Node};
use crate::error::{Error, Result};
use crate::format::{fmt_f64s, fmt_i64s, HeaderReader};
use crate::lattice::{CellRange, Lattice, StateBox};
use crate::runtime::Spec;
use crate::synthesis::{ModeSet, RefinedController, SpecKind, MAX_MODES};

/// Problem identity carried by both files. `eta` keeps the configured text.
#[derive(Debug, Clone, PartialEq)]
pub struct Meta {
    pub kind: SpecKind,
    pub n: usize,
    pub eta: String,
    pub safe: StateBox,
    pub target: Option<StateBox>,
    pub modes: usize,
}

impl Meta {
    pub fn lattice(&self) -> Result<Lattice> {
        let eta: f64 = self.eta.parse().map_err(|_| Error::Format(format!("bad eta {:?}", self.eta)))?;
        Lattice::new(self.n, eta)
    }

    pub fn spec(&self) -> Result<Spec> {
        match (self.kind, &self.target) {
            (SpecKind::Safety, _) => Ok(Spec::Safety { safe: self.safe.clone() }),
            (SpecKind::Reach, Some(t)) => Ok(Spec::Reach { safe: self.safe.clone(), target: t.clone() }),
            (SpecKind::Reach, None) => Err(Error::Format("reach file without a target box".into())),
        }
    }

    fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let kind = match self.kind {
            SpecKind::Safety => "safety",
            SpecKind::Reach => "reach",
        };
        writeln!(w, "kind {kind}")?;
        writeln!(w, "n {}", self.n)?;
        writeln!(w, "eta {}", self.eta)?;
        writeln!(w, "safe {}", fmt_box(&self.safe))?;
        if let Some(t) = &self.target {
            writeln!(w, "target {}", fmt_box(t))?;
        }
        writeln!(w, "modes {}", self.modes)?;
        Ok(())
    }

    fn read<R: BufRead>(h: &mut HeaderReader<R>) -> Result<Self> {
        let kind = match h.field("kind")?.rest.as_str() {
            "safety" => SpecKind::Safety,
            "reach" => SpecKind::Reach,
            other => return Err(Error::Format(format!("unknown kind {other:?}"))),
        };
        let n: usize = h.field("n")?.parse_one()?;
        let eta = h.field("eta")?.rest;
        let safe = parse_box(&h.field("safe")?.parse_all()?, n)?;
        let target = match kind {
            SpecKind::Reach => Some(parse_box(&h.field("target")?.parse_all()?, n)?),
            SpecKind::Safety => None,
        };
        let modes: usize = h.field("modes")?.parse_one()?;
        if modes == 0 || modes > MAX_MODES {
            return Err(Error::Format(format!("mode count {modes} outside 1..={MAX_MODES}")));
        }
        let meta = Meta { kind, n, eta, safe, target, modes };
        meta.lattice()?;
        Ok(meta)
    }
}

fn fmt_box(b: &StateBox) -> String {
    format!("{} {}", fmt_f64s(b.lo()), fmt_f64s(b.hi()))
}

fn parse_box(v: &[f64], n: usize) -> Result<StateBox> {
    if v.len() != 2 * n {
        return Err(Error::Format(format!("box needs {} numbers, found {}", 2 * n, v.len())));
    }
    StateBox::new(v[..n].to_vec(), v[n..].to_vec())
}

fn write_range<W: Write>(w: &mut W, r: &CellRange) -> Result<()> {
    writeln!(w, "range {} {}", fmt_i64s(&r.kmin), fmt_i64s(&r.kmax))?;
    Ok(())
}

fn read_range<R: BufRead>(h: &mut HeaderReader<R>, n: usize) -> Result<CellRange> {
    let v: Vec<i64> = h.field("range")?.parse_all()?;
    if v.len() != 2 * n {
        return Err(Error::Format("cell range has wrong arity".into()));
    }
    let r = CellRange::new(v[..n].to_vec(), v[n..].to_vec())?;
    if r.is_empty() {
        return Err(Error::Format("empty cell range".into()));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerFile {
    pub meta: Meta,
    pub epsilon: String,
    pub tau: String,
    pub controller: RefinedController,
}

impl ControllerFile {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.controller;
        if c.kind != self.meta.kind {
            return Err(Error::InvalidParameter("controller kind differs from the header".into()));
        }
        if c.k.len() != c.cells.len() || c.j_tilde.as_ref().is_some_and(|j| j.len() != c.cells.len()) {
            return Err(Error::Dimension("controller arrays do not match the cell range".into()));
        }
        writeln!(w, "QSC1")?;
        self.meta.write(&mut w)?;
        writeln!(w, "epsilon {}", self.epsilon)?;
        writeln!(w, "tau {}", self.tau)?;
        write_range(&mut w, &c.cells)?;
        writeln!(w, "data")?;
        let bytes: Vec<u8> = c.k.iter().map(|s| s.bits()).collect();
        w.write_all(&bytes)?;
        match (self.meta.kind, &c.j_tilde) {
            (SpecKind::Reach, Some(j)) => {
                let mut buf = Vec::with_capacity(4 * j.len());
                for v in j {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
            (SpecKind::Reach, None) => return Err(Error::InvalidParameter("reach controller without J~".into())),
            (SpecKind::Safety, _) => {}
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut h = HeaderReader::new(r);
        h.expect_magic("QSC1")?;
        let meta = Meta::read(&mut h)?;
        let epsilon = h.field("epsilon")?.rest;
        let tau = h.field("tau")?.rest;
        let cells = read_range(&mut h, meta.n)?;
        if h.line()? != "data" {
            return Err(Error::Format("expected data marker".into()));
        }
        let mut r = h.into_inner();
        let len = cells.len();
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes).map_err(|_| Error::Format("truncated mode-set section".into()))?;
        let limit = ModeSet::all(meta.modes).bits();
        if let Some(b) = bytes.iter().find(|&&b| b & !limit != 0) {
            return Err(Error::Format(format!("mode-set byte {b:#04x} names a mode past {}", meta.modes)));
        }
        let k = bytes.into_iter().map(ModeSet::from_bits).collect();
        let j_tilde = match meta.kind {
            SpecKind::Reach => {
                let mut raw = vec![0u8; 4 * len];
                r.read_exact(&mut raw).map_err(|_| Error::Format("truncated J~ section".into()))?;
                Some(raw.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
            }
            SpecKind::Safety => None,
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after controller data".into()));
        }
        let controller = RefinedController { kind: meta.kind, cells, k, j_tilde };
        Ok(ControllerFile { meta, epsilon, tau, controller })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeFile {
    pub meta: Meta,
    pub tree: DecisionTree,
}

impl TreeFile {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "QST1")?;
        self.meta.write(&mut w)?;
        write_range(&mut w, self.tree.cells())?;
        writeln!(w, "nodes {}", self.tree.node_count())?;
        let mut body = String::with_capacity(8 * self.tree.node_count());
        for node in self.tree.nodes() {
            match node {
                Node::Split { axis, threshold } => body.push_str(&format!("N {axis} {threshold}\n")),
                Node::Leaf(p) => body.push_str(&format!("L {p}\n")),
            }
        }
        w.write_all(body.as_bytes())?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut h = HeaderReader::new(r);
        h.expect_magic("QST1")?;
        let meta = Meta::read(&mut h)?;
        let cells = read_range(&mut h, meta.n)?;
        let count: usize = h.field("nodes")?.parse_one()?;
        let mut nodes = Vec::with_capacity(count.min(1 << 24));
        let bad = |l: &str| Error::Format(format!("bad tree line {l:?}"));
        for _ in 0..count {
            let line = h.line()?;
            let toks: Vec<&str> = line.split(' ').collect();
            let node = match toks.as_slice() {
                ["N", a, t] => Node::Split {
                    axis: a.parse().map_err(|_| bad(&line))?,
                    threshold: t.parse().map_err(|_| bad(&line))?,
                },
                ["L", p] => Node::Leaf(p.parse().map_err(|_| bad(&line))?),
                _ => return Err(bad(&line)),
            };
            nodes.push(node);
        }
        let mut rest = String::new();
        h.into_inner().read_to_string(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format("trailing content after the tree".into()));
        }
        let tree = DecisionTree::from_nodes(cells, meta.modes, nodes)?;
        Ok(TreeFile { meta, tree })
    }
}
