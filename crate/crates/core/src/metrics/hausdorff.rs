//! Hausdorff distance between pixel sets via an exact squared Euclidean
//! distance transform.
//!
//! Squared distances stay integral throughout, so the result is bit-identical
//! to the brute-force double loop.

/// Squared distance to the nearest feature pixel for every cell of a
/// `width x height` grid, `None` where the grid has no feature at all.
pub fn squared_edt(features: &[bool], width: usize, height: usize) -> Option<Vec<u64>> {
    assert_eq!(features.len(), width * height, "feature grid size");
    if !features.iter().any(|&f| f) {
        return None;
    }
    // column pass: squared vertical distance, None where the column is empty
    let mut col: Vec<Option<u64>> = vec![None; width * height];
    for x in 0..width {
        let mut last: Option<usize> = None;
        for y in 0..height {
            if features[y * width + x] {
                last = Some(y);
            }
            col[y * width + x] = last.map(|l| ((y - l) as u64).pow(2));
        }
        let mut next: Option<usize> = None;
        for y in (0..height).rev() {
            if features[y * width + x] {
                next = Some(y);
            }
            if let Some(n) = next {
                let d = ((n - y) as u64).pow(2);
                let cell = &mut col[y * width + x];
                *cell = Some(cell.map_or(d, |c| c.min(d)));
            }
        }
    }
    let mut out = vec![0u64; width * height];
    let mut f = Vec::with_capacity(width);
    for y in 0..height {
        f.clear();
        f.extend((0..width).filter_map(|x| col[y * width + x].map(|g| (x, g))));
        lower_envelope(&f, width, &mut out[y * width..(y + 1) * width]);
    }
    Some(out)
}

/// 1-D transform `out[q] = min_i (q - x_i)^2 + g_i` over the finite samples
/// `(x_i, g_i)`, ascending in `x`, by the lower envelope of parabolas.
fn lower_envelope(samples: &[(usize, u64)], width: usize, out: &mut [u64]) {
    let key = |(x, g): (usize, u64)| g as f64 + (x * x) as f64;
    // breakpoint between parabolas rooted at a and b (a.0 < b.0)
    let cross = |a: (usize, u64), b: (usize, u64)| (key(b) - key(a)) / (2.0 * (b.0 - a.0) as f64);
    let mut hull: Vec<(usize, u64)> = Vec::with_capacity(samples.len());
    let mut starts: Vec<f64> = Vec::with_capacity(samples.len());
    for &p in samples {
        loop {
            match hull.last() {
                Some(&top) => {
                    let s = cross(top, p);
                    if s <= *starts.last().expect("one start per hull entry") && hull.len() > 1 {
                        hull.pop();
                        starts.pop();
                    } else {
                        hull.push(p);
                        starts.push(s);
                        break;
                    }
                }
                None => {
                    hull.push(p);
                    starts.push(f64::NEG_INFINITY);
                    break;
                }
            }
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate().take(width) {
        while k + 1 < hull.len() && starts[k + 1] < q as f64 {
            k += 1;
        }
        // at an exact breakpoint both parabolas give the same value
        let (x, g) = hull[k];
        *o = (q.abs_diff(x) as u64).pow(2) + g;
    }
}

/// Directed squared distance `max_{a in from} min_{b in to} |a - b|^2`.
fn directed_sq(from: &[(usize, usize)], to: &[(usize, usize)]) -> u64 {
    let (y0, x0, h, w) = bounding_box(from.iter().chain(to));
    let mut grid = vec![false; w * h];
    for &(y, x) in to {
        grid[(y - y0) * w + x - x0] = true;
    }
    let dt = squared_edt(&grid, w, h).expect("target set is nonempty");
    from.iter().map(|&(y, x)| dt[(y - y0) * w + x - x0]).max().unwrap_or(0)
}

fn bounding_box<'a>(points: impl Iterator<Item = &'a (usize, usize)>) -> (usize, usize, usize, usize) {
    let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
    for &(y, x) in points {
        y0 = y0.min(y);
        x0 = x0.min(x);
        y1 = y1.max(y);
        x1 = x1.max(x);
    }
    (y0, x0, y1 - y0 + 1, x1 - x0 + 1)
}

/// Symmetric Hausdorff distance between two pixel sets given as `(y, x)`
/// coordinates; `None` when either set is empty.
pub fn hausdorff(g: &[(usize, usize)], s: &[(usize, usize)]) -> Option<f64> {
    if g.is_empty() || s.is_empty() {
        return None;
    }
    Some((directed_sq(g, s).max(directed_sq(s, g)) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn brute(g: &[(usize, usize)], s: &[(usize, usize)]) -> f64 {
        let d = |a: &(usize, usize), b: &(usize, usize)| {
            let (dy, dx) = (a.0 as f64 - b.0 as f64, a.1 as f64 - b.1 as f64);
            (dy * dy + dx * dx).sqrt()
        };
        let directed = |p: &[(usize, usize)], q: &[(usize, usize)]| {
            p.iter()
                .map(|a| q.iter().map(|b| d(a, b)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        directed(g, s).max(directed(s, g))
    }

    #[test]
    fn known_values() {
        assert_eq!(hausdorff(&[(0, 0)], &[(3, 4)]), Some(5.0));
        let a = [(1, 1), (2, 2), (5, 0)];
        assert_eq!(hausdorff(&a, &a), Some(0.0));
        assert_eq!(hausdorff(&[], &a), None);
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut rng = RngState::new(5);
        for _ in 0..50 {
            let (w, h) = (rng.range_inclusive(1, 20), rng.range_inclusive(1, 20));
            let p = rng.uniform_range(0.01, 0.3);
            let grid: Vec<bool> = (0..w * h).map(|_| rng.bernoulli(p)).collect();
            let Some(dt) = squared_edt(&grid, w, h) else { continue };
            for y in 0..h {
                for x in 0..w {
                    let expect = (0..w * h)
                        .filter(|&i| grid[i])
                        .map(|i| ((i / w).abs_diff(y).pow(2) + (i % w).abs_diff(x).pow(2)) as u64)
                        .min()
                        .unwrap();
                    assert_eq!(dt[y * w + x], expect);
                }
            }
        }
    }

    #[test]
    fn random_sets_match_brute_force() {
        let mut rng = RngState::new(11);
        for _ in 0..200 {
            let ng = rng.range_inclusive(1, 40);
            let ns = rng.range_inclusive(1, 40);
            let g: Vec<(usize, usize)> = (0..ng).map(|_| (rng.below(40), rng.below(40))).collect();
            let s: Vec<(usize, usize)> = (0..ns).map(|_| (rng.below(40), rng.below(40))).collect();
            assert_eq!(hausdorff(&g, &s).unwrap().to_bits(), brute(&g, &s).to_bits());
        }
    }
}
