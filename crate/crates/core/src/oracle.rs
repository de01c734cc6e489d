//! Brute-force reference implementations and random instance generators.
//!
//! Nothing here calls into the code it checks: each oracle recomputes its
//! answer by the most direct route (per-pixel loops, explicit flood fill,
//! pairwise counting, prefix re-evaluation).

use rand::Rng;

use crate::cam::{Heatmap, Resolution};
use crate::dissection::Connectivity;
use crate::rng::Rng64;
use crate::tensor_io::BBox;

/// `(iobb, ior)` by visiting every pixel and testing it against every box.
pub fn brute_soft_scores(map: &[f64], height: usize, width: usize, boxes: &[BBox]) -> (f64, f64) {
    let mut inside = 0.0;
    let mut total = 0.0;
    let mut area = 0usize;
    for r in 0..height {
        for c in 0..width {
            let v = map[r * width + c];
            total += v;
            let (x0, y0) = (c as f64, r as f64);
            let covered = boxes
                .iter()
                .any(|b| x0 < b.x + b.w && x0 + 1.0 > b.x && y0 < b.y + b.h && y0 + 1.0 > b.y);
            if covered {
                inside += v;
                area += 1;
            }
        }
    }
    let ior = if total == 0.0 { 0.0 } else { inside / total };
    (inside / area as f64, ior)
}

/// Component count by iterative depth-first flood fill.
pub fn flood_fill_count(cells: &[bool], height: usize, width: usize, conn: Connectivity) -> usize {
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    };
    let mut seen = vec![false; cells.len()];
    let mut count = 0;
    for start in 0..cells.len() {
        if !cells[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / width) as isize, (i % width) as isize);
            for &(dr, dc) in offsets {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                    continue;
                }
                let j = nr as usize * width + nc as usize;
                if cells[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}

/// `(#pos > neg pairs + 0.5 * #tied pairs) / (N+ N-)` by visiting every pair.
pub fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut good = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                good += 1.0;
            } else if si == sj {
                good += 0.5;
            }
        }
    }
    good / pairs
}

/// Step-wise AP: sum over prefixes of `(R_k - R_{k-1}) * P_k`, each prefix
/// recounted from scratch. Ranking is descending score with negatives before
/// positives inside a tie, then input order (insertion sort, stable).
pub fn brute_average_precision(scores: &[f64], labels: &[u8]) -> f64 {
    let mut ranked: Vec<usize> = Vec::with_capacity(scores.len());
    for i in 0..scores.len() {
        let before =
            |j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && labels[j] <= labels[i]);
        let pos = ranked.iter().take_while(|&&j| before(j)).count();
        ranked.insert(pos, i);
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 1..=ranked.len() {
        let tp = ranked[..k].iter().filter(|&&j| labels[j] == 1).count() as f64;
        let recall = tp / n_pos;
        let precision = tp / k as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Number of values at or above `tau`.
pub fn count_at_or_above(values: &[f32], tau: f32) -> usize {
    values.iter().filter(|&&v| v >= tau).count()
}

pub fn random_heatmap(rng: &mut Rng64, height: usize, width: usize) -> Heatmap {
    let values = (0..height * width).map(|_| rng.random::<f64>()).collect();
    Heatmap::new(height, width, values, Resolution::ImagePixels).expect("values in [0, 1)")
}

/// Integer-aligned box fully inside a `height x width` image.
pub fn random_box(rng: &mut Rng64, height: usize, width: usize) -> BBox {
    let x = rng.random_range(0..width);
    let y = rng.random_range(0..height);
    let w = rng.random_range(1..=width - x);
    let h = rng.random_range(1..=height - y);
    BBox::new("box", x as f64, y as f64, w as f64, h as f64)
}

/// Mask with random extent in `1..=max_side` and random fill density.
pub fn random_mask(rng: &mut Rng64, max_side: usize) -> (usize, usize, Vec<bool>) {
    let h = rng.random_range(1..=max_side);
    let w = rng.random_range(1..=max_side);
    let density: f64 = rng.random_range(0.05..0.95);
    let cells = (0..h * w).map(|_| rng.random_bool(density)).collect();
    (h, w, cells)
}

/// Scores and labels with at least one positive and one negative. Every
/// third instance draws scores from a tiny grid to force ties.
pub fn random_ranking(rng: &mut Rng64, max_n: usize) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=max_n);
    let tied = rng.random_range(0..3) == 0;
    let scores: Vec<f64> = (0..n)
        .map(|_| {
            if tied {
                rng.random_range(0..5) as f64 / 4.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    labels[0] = 1;
    labels[1] = 0;
    (scores, labels)
}
