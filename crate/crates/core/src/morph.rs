//! Binary morphology on [`VesselMask`]: disk dilation, 3x3 closing and
//! Zhang-Suen thinning.

use alloc::vec::Vec;

use crate::imaging::{MaskKind, VesselMask};

/// Dilation by a Euclidean disk of the given radius.
pub fn dilate_disk(mask: &VesselMask, radius: usize) -> VesselMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let mut out = VesselMask::empty(w, h, mask.kind);
    for (x, y) in mask.points() {
        for &(dx, dy) in &offsets {
            let tx = x as isize + dx;
            let ty = y as isize + dy;
            if tx >= 0 && ty >= 0 && (tx as usize) < w && (ty as usize) < h {
                out.set(tx as usize, ty as usize, true);
            }
        }
    }
    out
}

/// 3x3 square dilation; outside the grid counts as unset.
pub fn dilate3(mask: &VesselMask) -> VesselMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = VesselMask::empty(w, h, mask.kind);
    for y in 0..h {
        for x in 0..w {
            let hit = (-1..=1).any(|dy| {
                (-1..=1).any(|dx| mask.get_signed(x as isize + dx, y as isize + dy))
            });
            out.set(x, y, hit);
        }
    }
    out
}

/// 3x3 square erosion; outside the grid counts as set, so erosion never
/// eats into the border.
pub fn erode3(mask: &VesselMask) -> VesselMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = VesselMask::empty(w, h, mask.kind);
    for y in 0..h {
        for x in 0..w {
            let keep = (-1..=1).all(|dy| {
                (-1..=1).all(|dx| {
                    let tx = x as isize + dx;
                    let ty = y as isize + dy;
                    let outside = tx < 0 || ty < 0 || tx as usize >= w || ty as usize >= h;
                    outside || mask.get(tx as usize, ty as usize)
                })
            });
            out.set(x, y, keep);
        }
    }
    out
}

/// Morphological closing with a 3x3 square. Extensive and idempotent.
pub fn closing3(mask: &VesselMask) -> VesselMask {
    erode3(&dilate3(mask))
}

/// Zhang-Suen thinning to a one-pixel-wide skeleton.
///
/// The result is a subset of the input, tagged [`MaskKind::Centerline`].
pub fn zhang_suen(mask: &VesselMask) -> VesselMask {
    let (w, h) = (mask.width(), mask.height());
    let mut img = mask.clone();
    img.kind = MaskKind::Centerline;
    let mut to_clear: Vec<(usize, usize)> = Vec::new();
    loop {
        let mut changed = false;
        for step in 0..2 {
            to_clear.clear();
            for y in 0..h {
                for x in 0..w {
                    if !img.get(x, y) {
                        continue;
                    }
                    let (xi, yi) = (x as isize, y as isize);
                    // P2..P9 clockwise from north.
                    let p = [
                        img.get_signed(xi, yi - 1),
                        img.get_signed(xi + 1, yi - 1),
                        img.get_signed(xi + 1, yi),
                        img.get_signed(xi + 1, yi + 1),
                        img.get_signed(xi, yi + 1),
                        img.get_signed(xi - 1, yi + 1),
                        img.get_signed(xi - 1, yi),
                        img.get_signed(xi - 1, yi - 1),
                    ];
                    let b = p.iter().filter(|v| **v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let ok = if step == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        to_clear.push((x, y));
                    }
                }
            }
            for &(x, y) in &to_clear {
                img.set(x, y, false);
            }
            changed |= !to_clear.is_empty();
        }
        if !changed {
            return img;
        }
    }
}
