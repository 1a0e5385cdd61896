//! Mask morphology used for contour labels and post-processing.
//!
//! Connectivity is 4-neighbour throughout (components, hole filling and
//! boundary detection). The digital disk of radius `r` is every offset with
//! `dy^2 + dx^2 <= r^2`.

use std::collections::VecDeque;

use crate::mask::{BinaryMask, InstanceMask};

const NEIGHBORS4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiskElement {
    radius: usize,
    /// Half-width of the disk row at each `dy` in `-r..=r`.
    half_widths: Vec<usize>,
}

impl DiskElement {
    pub fn new(radius: usize) -> Self {
        let r2 = radius * radius;
        let half_widths = (0..=2 * radius)
            .map(|i| {
                let dy = i.abs_diff(radius);
                let rem = r2 - dy * dy;
                let mut hw = (rem as f64).sqrt() as usize;
                while hw * hw > rem {
                    hw -= 1;
                }
                while (hw + 1) * (hw + 1) <= rem {
                    hw += 1;
                }
                hw
            })
            .collect();
        Self {
            radius,
            half_widths,
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// All `(dy, dx)` offsets in the disk, row-major.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.radius as isize;
        let mut out = Vec::new();
        for (i, &hw) in self.half_widths.iter().enumerate() {
            let dy = i as isize - r;
            for dx in -(hw as isize)..=hw as isize {
                out.push((dy, dx));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.half_widths.iter().map(|&h| 2 * h + 1).sum()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn rows(&self) -> impl Iterator<Item = (isize, usize)> + '_ {
        let r = self.radius as isize;
        self.half_widths
            .iter()
            .enumerate()
            .map(move |(i, &hw)| (i as isize - r, hw))
    }
}

/// Per-row inclusive prefix counts: `p[y][x + 1] - p[y][a]` counts set bits
/// in `[a, x]`.
fn row_prefix(mask: &BinaryMask) -> Vec<Vec<u32>> {
    (0..mask.height())
        .map(|y| {
            let mut p = Vec::with_capacity(mask.width() + 1);
            p.push(0);
            let mut acc = 0;
            for x in 0..mask.width() {
                acc += mask.get(y, x) as u32;
                p.push(acc);
            }
            p
        })
        .collect()
}

/// Sums `f(row, lo, hi)` over the disk rows that fall inside the image.
fn disk_window<F: FnMut(usize, usize, usize)>(disk: &DiskElement, w: usize, h: usize, y: usize, x: usize, mut f: F) {
    for (dy, hw) in disk.rows() {
        let yy = y as isize + dy;
        if yy < 0 || yy >= h as isize {
            continue;
        }
        let lo = x.saturating_sub(hw);
        let hi = (x + hw).min(w - 1);
        f(yy as usize, lo, hi);
    }
}

/// Minkowski sum with the disk, clipped to the image.
pub fn dilate(mask: &BinaryMask, disk: &DiskElement) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    if disk.radius == 0 {
        return mask.clone();
    }
    let pre = row_prefix(mask);
    BinaryMask::from_fn(w, h, |y, x| {
        let mut hit = false;
        disk_window(disk, w, h, y, x, |row, lo, hi| {
            hit |= pre[row][hi + 1] > pre[row][lo];
        });
        hit
    })
}

/// Mean of the mask over the border-clipped disk, thresholded at `>= 0.5`.
pub fn smooth_disk(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let disk = DiskElement::new(radius);
    let (w, h) = (mask.width(), mask.height());
    let pre = row_prefix(mask);
    BinaryMask::from_fn(w, h, |y, x| {
        let mut on = 0u32;
        let mut total = 0u32;
        disk_window(&disk, w, h, y, x, |row, lo, hi| {
            on += pre[row][hi + 1] - pre[row][lo];
            total += (hi - lo + 1) as u32;
        });
        2 * on >= total
    })
}

fn flood_label<F: Fn(usize, usize) -> bool>(w: usize, h: usize, same: F, active: impl Fn(usize) -> bool) -> InstanceMask {
    let mut out = InstanceMask::new(w, h);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !active(start) || out.labels()[start] != 0 {
            continue;
        }
        next += 1;
        out.set(start / w, start % w, next);
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            for (dy, dx) in NEIGHBORS4 {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if active(j) && out.labels()[j] == 0 && same(i, j) {
                    out.set(ny as usize, nx as usize, next);
                    queue.push_back(j);
                }
            }
        }
    }
    out
}

/// 4-connected components labeled `1..=n` in raster order of each
/// component's first pixel.
pub fn connected_components(mask: &BinaryMask) -> InstanceMask {
    let bits = mask.bits();
    flood_label(mask.width(), mask.height(), |_, _| true, |i| bits[i])
}

/// Components of pixels sharing the same positive label.
pub(crate) fn connected_components_by_label(inst: &InstanceMask) -> InstanceMask {
    let l = inst.labels();
    flood_label(inst.width(), inst.height(), |i, j| l[i] == l[j], |i| l[i] != 0)
}

/// Object pixels with at least one 4-neighbour carrying a different label
/// (the image border counts as different), dilated by a disk.
pub fn extract_contour_labels(instances: &InstanceMask, radius: usize) -> BinaryMask {
    let (w, h) = (instances.width(), instances.height());
    let boundary = BinaryMask::from_fn(w, h, |y, x| {
        let l = instances.get(y, x);
        l != 0
            && NEIGHBORS4.iter().any(|&(dy, dx)| {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                ny < 0
                    || nx < 0
                    || ny >= h as isize
                    || nx >= w as isize
                    || instances.get(ny as usize, nx as usize) != l
            })
    });
    dilate(&boundary, &DiskElement::new(radius))
}

/// Sets every background pixel not 4-connected to the image border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let border = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            if border && !mask.get(y, x) {
                outside[y * w + x] = true;
                queue.push_back((y, x));
            }
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        for (dy, dx) in NEIGHBORS4 {
            let (ny, nx) = (y as isize + dy, x as isize + dx);
            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                continue;
            }
            let (ny, nx) = (ny as usize, nx as usize);
            if !mask.get(ny, nx) && !outside[ny * w + nx] {
                outside[ny * w + nx] = true;
                queue.push_back((ny, nx));
            }
        }
    }
    BinaryMask::from_fn(w, h, |y, x| !outside[y * w + x])
}

/// Drops 4-connected components with fewer than `min_area` pixels.
pub fn remove_small(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    if min_area == 0 {
        return mask.clone();
    }
    let comps = connected_components(mask);
    let areas = comps.areas();
    BinaryMask::from_fn(mask.width(), mask.height(), |y, x| {
        let l = comps.get(y, x);
        l != 0 && areas[&l] >= min_area
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_radius_three_has_29_offsets() {
        let d = DiskElement::new(3);
        let offs = d.offsets();
        assert_eq!(offs.len(), 29);
        assert_eq!(d.len(), 29);
        assert!(offs.contains(&(0, 0)));
        for &(dy, dx) in &offs {
            assert!(dy * dy + dx * dx <= 9);
            assert!(offs.contains(&(-dy, -dx)));
        }
        assert_eq!(DiskElement::new(0).offsets(), vec![(0, 0)]);
    }

    #[test]
    fn single_pixel_dilates_to_disk() {
        let mut m = BinaryMask::new(11, 11);
        m.set(5, 5, true);
        let d = dilate(&m, &DiskElement::new(3));
        assert_eq!(d.count(), 29);
        for y in 0..11 {
            for x in 0..11 {
                let (dy, dx) = (y as isize - 5, x as isize - 5);
                assert_eq!(d.get(y, x), dy * dy + dx * dx <= 9);
            }
        }
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let m = BinaryMask::from_bits(2, 2, vec![true, false, false, true]).unwrap();
        let c = connected_components(&m);
        assert_eq!(c.labels(), &[1, 0, 0, 2]);
        assert_eq!(connected_components(&BinaryMask::new(4, 4)).num_objects(), 0);
    }

    #[test]
    fn square_perimeter_ring() {
        let mut inst = InstanceMask::new(12, 12);
        for y in 2..10 {
            for x in 2..10 {
                inst.set(y, x, 1);
            }
        }
        let ring = extract_contour_labels(&inst, 0);
        assert_eq!(ring.count(), 28);
        assert!(!ring.get(5, 5));
        assert!(ring.get(2, 5) && ring.get(9, 9));
        assert_eq!(extract_contour_labels(&InstanceMask::new(5, 5), 3).count(), 0);
    }

    #[test]
    fn ring_interior_filled_and_channel_not() {
        let mut ring = BinaryMask::new(7, 7);
        for i in 1..6 {
            ring.set(1, i, true);
            ring.set(5, i, true);
            ring.set(i, 1, true);
            ring.set(i, 5, true);
        }
        let filled = fill_holes(&ring);
        assert_eq!(filled.count(), 25);
        let mut open = ring.clone();
        open.set(1, 3, false);
        assert_eq!(fill_holes(&open), open);
    }

    #[test]
    fn remove_small_keeps_large() {
        let mut m = BinaryMask::new(20, 20);
        for x in 0..3 {
            m.set(0, x, true);
        }
        for y in 5..15 {
            for x in 5..10 {
                m.set(y, x, true);
            }
        }
        let r = remove_small(&m, 10);
        assert_eq!(r.count(), 50);
        assert!(!r.get(0, 0));
        assert_eq!(remove_small(&m, 0), m);
    }

    #[test]
    fn smoothing_extremes() {
        let full = BinaryMask::from_bits(6, 5, vec![true; 30]).unwrap();
        assert_eq!(smooth_disk(&full, 3), full);
        let mut dot = BinaryMask::new(9, 9);
        dot.set(4, 4, true);
        assert_eq!(smooth_disk(&dot, 3).count(), 0);
    }
}
