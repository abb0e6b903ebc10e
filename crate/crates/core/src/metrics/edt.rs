//! Exact separable Euclidean distance transform on anisotropic grids.
//!
//! Lower envelope of parabolas along x, then y, then z. Each pass evaluates
//! `g[p] + ((q - p) * s)^2` in exactly that form, so the squared distance
//! produced for a voxel is bit-identical to the direct evaluation
//! `(dx*dx + dy*dy) + dz*dz` for its nearest seed. Envelope breakpoints are
//! computed in floating point; the winning parabola is re-checked against
//! its envelope neighbours so that rounding near a breakpoint cannot select
//! a site that is worse by an ulp.

/// Squared distance (mm²) from every voxel to the nearest seed voxel center.
/// Voxels get `f64::INFINITY` when there are no seeds.
pub(crate) fn squared_edt(seeds: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    debug_assert_eq!(seeds.len(), nx * ny * nz);
    let mut f: Vec<f64> = seeds
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    if !seeds.iter().any(|&s| s) {
        return f;
    }

    let longest = nx.max(ny).max(nz);
    let mut scratch = Scratch::new(longest);

    // x lines are contiguous.
    for line in f.chunks_exact_mut(nx) {
        scratch.load(line.iter().copied());
        scratch.transform(spacing[0]);
        line.copy_from_slice(&scratch.out[..nx]);
    }

    // y lines: stride nx.
    for z in 0..nz {
        for x in 0..nx {
            let base = x + nx * ny * z;
            scratch.load((0..ny).map(|y| f[base + nx * y]));
            if scratch.all_infinite() {
                continue;
            }
            scratch.transform(spacing[1]);
            for y in 0..ny {
                f[base + nx * y] = scratch.out[y];
            }
        }
    }

    // z lines: stride nx * ny.
    let plane = nx * ny;
    for i in 0..plane {
        scratch.load((0..nz).map(|z| f[i + plane * z]));
        if scratch.all_infinite() {
            continue;
        }
        scratch.transform(spacing[2]);
        for z in 0..nz {
            f[i + plane * z] = scratch.out[z];
        }
    }
    f
}

struct Scratch {
    g: Vec<f64>,
    out: Vec<f64>,
    /// Sites on the lower envelope.
    v: Vec<usize>,
    /// Breakpoints; parabola `v[k]` is lowest on `[z[k], z[k + 1]]`.
    z: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            g: Vec::with_capacity(n),
            out: vec![0.0; n],
            v: vec![0; n],
            z: vec![0.0; n + 1],
        }
    }

    fn load(&mut self, values: impl Iterator<Item = f64>) {
        self.g.clear();
        self.g.extend(values);
    }

    fn all_infinite(&self) -> bool {
        self.g.iter().all(|v| v.is_infinite())
    }

    fn transform(&mut self, s: f64) {
        let n = self.g.len();
        let g = &self.g;
        let w = s * s;
        let intersect = |p: usize, r: usize| -> f64 {
            let (pf, rf) = (p as f64, r as f64);
            ((g[r] + w * rf * rf) - (g[p] + w * pf * pf)) / (2.0 * w * (rf - pf))
        };

        let mut k: usize = 0;
        let mut have_site = false;
        for q in 0..n {
            if g[q].is_infinite() {
                continue;
            }
            if !have_site {
                self.v[0] = q;
                self.z[0] = f64::NEG_INFINITY;
                self.z[1] = f64::INFINITY;
                have_site = true;
                continue;
            }
            loop {
                let sect = intersect(self.v[k], q);
                if sect <= self.z[k] && k > 0 {
                    k -= 1;
                } else {
                    k += 1;
                    self.v[k] = q;
                    self.z[k] = sect;
                    break;
                }
            }
            self.z[k + 1] = f64::INFINITY;
        }
        if !have_site {
            self.out[..n].fill(f64::INFINITY);
            return;
        }

        let eval = |site: usize, q: usize| -> f64 {
            let d = (q as f64 - site as f64) * s;
            g[site] + d * d
        };
        let last = k;
        let mut k = 0;
        for q in 0..n {
            let qf = q as f64;
            while k < last && self.z[k + 1] < qf {
                k += 1;
            }
            let mut best = eval(self.v[k], q);
            if k > 0 {
                best = best.min(eval(self.v[k - 1], q));
            }
            if k < last {
                best = best.min(eval(self.v[k + 1], q));
            }
            self.out[q] = best;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_1d(g: &[f64], s: f64) -> Vec<f64> {
        (0..g.len())
            .map(|q| {
                g.iter()
                    .enumerate()
                    .map(|(p, &gp)| {
                        let d = (q as f64 - p as f64) * s;
                        gp + d * d
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    fn run_1d(g: &[f64], s: f64) -> Vec<f64> {
        let mut sc = Scratch::new(g.len());
        sc.load(g.iter().copied());
        sc.transform(s);
        sc.out[..g.len()].to_vec()
    }

    #[test]
    fn single_seed_line() {
        let mut g = vec![f64::INFINITY; 7];
        g[2] = 0.0;
        assert_eq!(run_1d(&g, 1.5), vec![9.0, 2.25, 0.0, 2.25, 9.0, 20.25, 36.0]);
    }

    #[test]
    fn empty_line_stays_infinite() {
        let g = vec![f64::INFINITY; 5];
        assert!(run_1d(&g, 1.0).iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn three_four_five() {
        let dims = [8, 8, 1];
        let mut seeds = vec![false; 64];
        seeds[0] = true;
        let f = squared_edt(&seeds, dims, [1.0, 1.0, 1.0]);
        assert_eq!(f[3 + 8 * 4].sqrt(), 5.0);
    }

    proptest! {
        #[test]
        fn line_transform_matches_brute_force(
            raw in prop::collection::vec(prop::option::of(0.0f64..50.0), 1..40),
            s in 0.1f64..6.0,
        ) {
            let g: Vec<f64> = raw.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
            prop_assert_eq!(run_1d(&g, s), brute_1d(&g, s));
        }

        #[test]
        fn volume_transform_matches_brute_force(
            nx in 1usize..9, ny in 1usize..9, nz in 1usize..9,
            sx in 0.3f64..4.0, sy in 0.3f64..4.0, sz in 0.3f64..4.0,
            bits in prop::collection::vec(prop::bool::weighted(0.08), 512),
        ) {
            let n = nx * ny * nz;
            let seeds = &bits[..n];
            let f = squared_edt(seeds, [nx, ny, nz], [sx, sy, sz]);
            let coords = |i: usize| [i % nx, (i / nx) % ny, i / (nx * ny)];
            for q in 0..n {
                let cq = coords(q);
                let mut best = f64::INFINITY;
                for p in (0..n).filter(|&p| seeds[p]) {
                    let cp = coords(p);
                    let dx = (cq[0] as f64 - cp[0] as f64) * sx;
                    let dy = (cq[1] as f64 - cp[1] as f64) * sy;
                    let dz = (cq[2] as f64 - cp[2] as f64) * sz;
                    best = best.min(dx * dx + dy * dy + dz * dz);
                }
                prop_assert_eq!(f[q], best);
            }
        }
    }
}
