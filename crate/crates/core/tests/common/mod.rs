//! Shared helpers for the integration tests.

#![allow(dead_code)]

use vanet_mac::mac_stdma::{select_nts, Selection, SlotMap};
use vanet_mac::rng::SlotRng;
use vanet_mac::time::Nanos;

/// Replays a fixed list of draws and counts how many were taken.
pub struct Script {
    draws: Vec<usize>,
    pub taken: usize,
}

impl Script {
    pub fn new(draws: Vec<usize>) -> Self {
        Self { draws, taken: 0 }
    }
}

impl SlotRng for Script {
    fn below(&mut self, n: usize) -> usize {
        let v = self.draws[self.taken];
        self.taken += 1;
        assert!(v < n, "scripted draw {v} out of 0..{n}");
        v
    }
}

/// What one node believes about one slot of its window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cellv {
    Free,
    Own,
    Heard { owner: u32, stale: bool },
}

pub const FRAME: Nanos = Nanos(1_000);
pub const NOW: Nanos = Nanos(5_000);
const SELF_ID: u32 = 0;

/// Brute-force statement of the selection rule, written directly from the
/// protocol prose: keep the drawn slot if free, else the free slot nearest
/// to it in the interval (coin 0 picks the earlier of two equally near,
/// coin 1 the later), else the slot of the farthest other owner (lowest id
/// on equal distance), else the drawn slot.
/// Returns the slot and how many draws were consumed.
pub fn reference(window: &[usize], cells: &[Cellv], dist: &dyn Fn(u32) -> f64, cand: usize, coin: usize) -> (usize, Option<u32>, usize) {
    let free = |i: usize| match cells[i] {
        Cellv::Free => true,
        Cellv::Heard { stale, .. } => stale,
        Cellv::Own => false,
    };
    if free(cand) {
        return (window[cand], None, 1);
    }
    let mut nearest: Vec<usize> = Vec::new();
    for d in 1..window.len() {
        let lo = cand.checked_sub(d).filter(|&i| free(i));
        let hi = Some(cand + d).filter(|&i| i < window.len() && free(i));
        nearest = lo.into_iter().chain(hi).collect();
        if !nearest.is_empty() {
            break;
        }
    }
    match nearest.len() {
        1 => return (window[nearest[0]], None, 1),
        2 => return (window[nearest[coin]], None, 2),
        _ => {}
    }
    let mut best: Option<(usize, u32, f64)> = None;
    for (i, c) in cells.iter().enumerate() {
        if let Cellv::Heard { owner, stale: false } = *c {
            let d = dist(owner);
            let better = match best {
                None => true,
                Some((_, o, bd)) => d > bd || (d == bd && owner < o),
            };
            if better {
                best = Some((i, owner, d));
            }
        }
    }
    match best {
        Some((i, owner, _)) => (window[i], Some(owner), 1),
        None => (window[cand], None, 1),
    }
}

/// Builds the slot map a node with id 0 at the origin would hold.
pub fn build_map(n_slots: usize, window: &[usize], cells: &[Cellv], pos: &dyn Fn(u32) -> (f64, f64)) -> SlotMap {
    let mut map = SlotMap::new(n_slots, SELF_ID);
    for (&s, c) in window.iter().zip(cells) {
        match *c {
            Cellv::Free => {}
            Cellv::Own => map.mark_own(s, (0.0, 0.0), NOW),
            Cellv::Heard { owner, stale } => {
                let at = if stale { Nanos(NOW.0 - 3 * FRAME.0) } else { Nanos(NOW.0 - FRAME.0 / 2) };
                map.record_heard(s, owner, pos(owner), at, (0.0, 0.0));
            }
        }
    }
    map
}

/// Runs the implementation against the reference on every slot-map state of
/// every window of at most five slots in frames of up to twelve slots, with
/// one own node and two others. Returns (instances, mismatches).
pub fn exhaustive_selection_check() -> (u64, Vec<String>) {
    let states = [
        Cellv::Free,
        Cellv::Own,
        Cellv::Heard { owner: 1, stale: false },
        Cellv::Heard { owner: 2, stale: false },
        Cellv::Heard { owner: 1, stale: true },
    ];
    let layouts: [(f64, f64); 3] = [(300.0, 700.0), (700.0, 300.0), (500.0, 500.0)];
    let mut instances = 0u64;
    let mut mismatches = Vec::new();
    for n in 1..=12usize {
        for width in 1..=n.min(5) {
            let mut starts = vec![0, n - 1];
            starts.dedup();
            for start in starts {
                let window: Vec<usize> = (0..width).map(|k| (start + k) % n).collect();
                for code in 0..states.len().pow(width as u32) {
                    let mut c = code;
                    let cells: Vec<Cellv> = (0..width)
                        .map(|_| {
                            let s = states[c % states.len()];
                            c /= states.len();
                            s
                        })
                        .collect();
                    for &(da, db) in &layouts {
                        let dist = move |o: u32| if o == 1 { da } else { db };
                        let pos = move |o: u32| (dist(o), 0.0);
                        let map = build_map(n, &window, &cells, &pos);
                        for cand in 0..width {
                            for coin in 0..2 {
                                instances += 1;
                                let want = reference(&window, &cells, &dist, cand, coin);
                                let mut rng = Script::new(vec![cand, coin]);
                                let Selection { slot, stolen_from } =
                                    select_nts(&window, &map, (0.0, 0.0), NOW, FRAME, &mut rng);
                                let got = (slot, stolen_from, rng.taken);
                                if got != want {
                                    mismatches.push(format!(
                                        "n={n} window={window:?} cells={cells:?} d=({da},{db}) cand={cand} coin={coin}: got {got:?}, want {want:?}"
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (instances, mismatches)
}
