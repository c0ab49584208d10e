//! Binary attention supervision: feature cells whose center falls inside a
//! face assigned to that level.

use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorSet, PyramidLevelSpec};
use crate::assign::AssignmentResult;
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelMask {
    pub grid_w: usize,
    pub grid_h: usize,
    /// Row-major, entries 0 or 1.
    pub cells: Vec<u8>,
}

impl LevelMask {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.grid_w + col]
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }

    /// Rows of `0`/`1` characters.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.cells.len() + self.grid_h);
        for row in self.cells.chunks(self.grid_w.max(1)) {
            s.extend(row.iter().map(|&c| if c == 1 { '1' } else { '0' }));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionTarget {
    pub levels: Vec<LevelMask>,
}

/// For every level, the ground truths with at least one positive anchor there.
pub fn level_assignments(
    anchors: &AnchorSet,
    assignment: &AssignmentResult,
    num_gts: usize,
) -> Vec<Vec<usize>> {
    let mut hit = vec![vec![false; num_gts]; anchors.levels().len()];
    for (i, label) in assignment.labels.iter().enumerate() {
        if let Some(g) = label.gt() {
            hit[anchors.level_of[i]][g] = true;
        }
    }
    hit.into_iter()
        .map(|row| row.iter().enumerate().filter(|(_, &h)| h).map(|(g, _)| g).collect())
        .collect()
}

/// Fills the boxes listed for each level into that level's grid.
pub fn rasterize(
    gts: &[BBox],
    level_assignments: &[Vec<usize>],
    specs: &[PyramidLevelSpec],
) -> AttentionTarget {
    let levels = specs
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let mut cells = vec![0u8; spec.num_cells()];
            let assigned = level_assignments.get(l).map(Vec::as_slice).unwrap_or(&[]);
            let s = spec.stride as f64;
            for &g in assigned {
                let b = &gts[g];
                // cells whose centers (c + 0.5) * s fall in [x_min, x_max]
                let c0 = ((b.x_min / s - 0.5).ceil().max(0.0)) as usize;
                let r0 = ((b.y_min / s - 0.5).ceil().max(0.0)) as usize;
                let c1 = (b.x_max / s - 0.5).floor();
                let r1 = (b.y_max / s - 0.5).floor();
                if c1 < 0.0 || r1 < 0.0 {
                    continue;
                }
                let c1 = (c1 as usize).min(spec.grid_w.saturating_sub(1));
                let r1 = (r1 as usize).min(spec.grid_h.saturating_sub(1));
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        let (cx, cy) = spec.cell_center(r, c);
                        if b.contains_point(cx, cy) {
                            cells[r * spec.grid_w + c] = 1;
                        }
                    }
                }
            }
            LevelMask { grid_w: spec.grid_w, grid_h: spec.grid_h, cells }
        })
        .collect();
    AttentionTarget { levels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::build_pyramid;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn brute(gts: &[BBox], la: &[Vec<usize>], specs: &[PyramidLevelSpec]) -> Vec<Vec<u8>> {
        specs
            .iter()
            .enumerate()
            .map(|(l, spec)| {
                let mut v = Vec::new();
                for r in 0..spec.grid_h {
                    for c in 0..spec.grid_w {
                        let (cx, cy) = spec.cell_center(r, c);
                        v.push(la[l].iter().any(|&g| gts[g].contains_point(cx, cy)) as u8);
                    }
                }
                v
            })
            .collect()
    }

    #[test]
    fn no_faces_all_zero() {
        let specs = build_pyramid(64, 64).unwrap();
        let t = rasterize(&[], &vec![vec![]; 6], &specs);
        assert!(t.levels.iter().all(|l| l.count_ones() == 0));
    }

    #[test]
    fn full_cover_on_top_level() {
        let specs = build_pyramid(640, 640).unwrap();
        let mut la = vec![vec![]; 6];
        la[5] = vec![0];
        let t = rasterize(&[b(0., 0., 640., 640.)], &la, &specs);
        assert_eq!(t.levels[5].count_ones(), 25);
        assert!(t.levels[..5].iter().all(|l| l.count_ones() == 0));
    }

    #[test]
    fn small_box_on_finest_level() {
        let specs = build_pyramid(32, 32).unwrap();
        let mut la = vec![vec![]; 6];
        la[0] = vec![0];
        let t = rasterize(&[b(0., 0., 8., 8.)], &la, &specs);
        let m = &t.levels[0];
        assert_eq!(m.count_ones(), 4);
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(m.get(r, c), 1);
        }
        assert!(m.to_text().starts_with("11000000\n11000000\n00000000\n"));
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            raw in proptest::collection::vec((-20.0..120.0f64, -20.0..120.0f64, 0.0..80.0f64, 0.0..80.0f64, 0usize..6), 0..6)
        ) {
            let specs = build_pyramid(100, 90).unwrap();
            let gts: Vec<BBox> = raw.iter().map(|&(x, y, w, h, _)| BBox::from_xywh(x, y, w, h).unwrap()).collect();
            let mut la = vec![vec![]; 6];
            for (g, &(.., l)) in raw.iter().enumerate() {
                la[l].push(g);
            }
            let t = rasterize(&gts, &la, &specs);
            let want = brute(&gts, &la, &specs);
            for (m, w) in t.levels.iter().zip(&want) {
                prop_assert_eq!(&m.cells, w);
            }
        }

        #[test]
        fn monotone_in_box_growth(x in 0.0..60.0f64, y in 0.0..60.0f64, w in 1.0..30.0f64, h in 1.0..30.0f64, grow in 0.0..20.0f64) {
            let specs = build_pyramid(100, 100).unwrap();
            let la = vec![vec![0]; 6];
            let small = rasterize(&[BBox::from_xywh(x, y, w, h).unwrap()], &la, &specs);
            let big = rasterize(&[BBox::from_xywh(x - grow, y - grow, w + 2.0 * grow, h + 2.0 * grow).unwrap()], &la, &specs);
            for (s, b) in small.levels.iter().zip(&big.levels) {
                prop_assert!(s.count_ones() <= b.count_ones());
            }
        }
    }
}
