//! 8-connected component labelling and flood fill on row-major grids.

use std::collections::VecDeque;

const NEIGHBORS: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

pub fn neighbors8(width: usize, height: usize, idx: usize) -> impl Iterator<Item = usize> {
    let (x, y) = ((idx % width) as i64, (idx / width) as i64);
    NEIGHBORS.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height)
            .then(|| ny as usize * width + nx as usize)
    })
}

/// Pixels reachable from `start` through 8-neighbours accepted by `accept`.
/// Returns an empty set when `start` itself is rejected.
pub fn flood_fill(
    width: usize,
    height: usize,
    start: usize,
    accept: impl Fn(usize) -> bool,
) -> Vec<usize> {
    if !accept(start) {
        return Vec::new();
    }
    let mut seen = vec![false; width * height];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut out = Vec::new();
    while let Some(i) = queue.pop_front() {
        out.push(i);
        for n in neighbors8(width, height, i) {
            if !seen[n] && accept(n) {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    out
}

/// Connected components of the foreground, in order of their first pixel
/// in row-major scan order.
pub fn label_components(
    width: usize,
    height: usize,
    foreground: impl Fn(usize) -> bool,
) -> Vec<Vec<usize>> {
    let mut label = vec![false; width * height];
    let mut comps = Vec::new();
    for i in 0..width * height {
        if label[i] || !foreground(i) {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([i]);
        label[i] = true;
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            for n in neighbors8(width, height, p) {
                if !label[n] && foreground(n) {
                    label[n] = true;
                    queue.push_back(n);
                }
            }
        }
        comps.push(comp);
    }
    comps
}
