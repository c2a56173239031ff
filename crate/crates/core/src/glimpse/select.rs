use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::glimpse::entropy::EntropyMap;
use crate::glimpse::spec::Anchor;
use crate::rng::Rng;

/// Glimpse selection strategy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    /// Maximize footprint-averaged attention entropy.
    #[default]
    Attention,
    Random,
    Checker,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 3] = [SelectorKind::Attention, SelectorKind::Random, SelectorKind::Checker];

    pub fn name(self) -> &'static str {
        match self {
            SelectorKind::Attention => "attention",
            SelectorKind::Random => "random",
            SelectorKind::Checker => "checker",
        }
    }

    pub fn needs_entropy(self) -> bool {
        self == SelectorKind::Attention
    }
}

impl std::str::FromStr for SelectorKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" | "ame" => Ok(Self::Attention),
            "random" => Ok(Self::Random),
            "checker" | "checkerboard" => Ok(Self::Checker),
            other => Err(config(format!("unknown selector {other:?}"))),
        }
    }
}

fn anchors(rows: usize, cols: usize, side: usize) -> impl Iterator<Item = Anchor> {
    let (ar, ac) = ((rows + 1).saturating_sub(side), (cols + 1).saturating_sub(side));
    (0..ar).flat_map(move |row| (0..ac).map(move |col| Anchor { row, col }))
}

/// Highest footprint-mean entropy among anchors that still contain an
/// unknown patch; ties go to the smallest row-major anchor. `None` once
/// every patch is known.
pub fn select_ame(emap: &EntropyMap, side: usize, known: &[bool]) -> Option<Anchor> {
    let mut best: Option<(Anchor, f64)> = None;
    let area = (side * side) as f64;
    for a in anchors(emap.rows, emap.cols, side) {
        let mut sum = 0.0;
        let mut unknown = false;
        for r in a.row..a.row + side {
            for c in a.col..a.col + side {
                sum += emap.at(r, c);
                unknown |= !known[r * emap.cols + c];
            }
        }
        let mean = sum / area;
        if unknown && best.is_none_or(|(_, b)| mean > b) {
            best = Some((a, mean));
        }
    }
    best.map(|(a, _)| a)
}

/// Uniform over every anchor where the glimpse fits; overlap allowed.
pub fn select_random(rows: usize, cols: usize, side: usize, rng: &mut Rng) -> Option<Anchor> {
    let (ar, ac) = ((rows + 1).saturating_sub(side), (cols + 1).saturating_sub(side));
    if ar == 0 || ac == 0 {
        return None;
    }
    let k = rng.random_range(0..ar * ac);
    Some(Anchor {
        row: k / ac,
        col: k % ac,
    })
}

/// Non-overlapping glimpse-sized cells: even-parity cells in random order,
/// then odd-parity cells in random order.
#[derive(Clone, Debug)]
pub struct Checkerboard {
    order: Vec<Anchor>,
    next: usize,
}

impl Checkerboard {
    pub fn new(rows: usize, cols: usize, side: usize, rng: &mut Rng) -> Self {
        let (cr, cc) = (rows / side.max(1), cols / side.max(1));
        let cells = |parity: usize| -> Vec<Anchor> {
            (0..cr)
                .flat_map(|r| (0..cc).map(move |c| (r, c)))
                .filter(|(r, c)| (r + c) % 2 == parity)
                .map(|(r, c)| Anchor {
                    row: r * side,
                    col: c * side,
                })
                .collect()
        };
        let mut even = cells(0);
        let mut odd = cells(1);
        even.shuffle(rng);
        odd.shuffle(rng);
        even.extend(odd);
        Self { order: even, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.next
    }
}

impl Iterator for Checkerboard {
    type Item = Anchor;

    fn next(&mut self) -> Option<Anchor> {
        let a = self.order.get(self.next).copied();
        self.next += a.is_some() as usize;
        a
    }
}

/// Per-episode selector state.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Selector {
    Attention,
    Random(Rng),
    Checker(Checkerboard),
}

impl Selector {
    pub fn new(kind: SelectorKind, rows: usize, cols: usize, side: usize, mut rng: Rng) -> Self {
        match kind {
            SelectorKind::Attention => Selector::Attention,
            SelectorKind::Random => Selector::Random(rng),
            SelectorKind::Checker => Selector::Checker(Checkerboard::new(rows, cols, side, &mut rng)),
        }
    }

    pub fn kind(&self) -> SelectorKind {
        match self {
            Selector::Attention => SelectorKind::Attention,
            Selector::Random(_) => SelectorKind::Random,
            Selector::Checker(_) => SelectorKind::Checker,
        }
    }

    /// Next anchor; `emap` is required for the attention selector.
    pub fn next(
        &mut self,
        emap: Option<&EntropyMap>,
        known: &[bool],
        rows: usize,
        cols: usize,
        side: usize,
    ) -> Result<Option<Anchor>> {
        Ok(match self {
            Selector::Attention => {
                let m = emap.ok_or_else(|| crate::error::contract("attention selector without an entropy map"))?;
                select_ame(m, side, known)
            }
            Selector::Random(rng) => select_random(rows, cols, side, rng),
            Selector::Checker(cb) => cb.next(),
        })
    }
}
