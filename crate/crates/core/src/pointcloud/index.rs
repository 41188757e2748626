/// Uniform XY grid over a point set, stored in compressed-row form: the
/// points of cell `c` are `order[start[c]..start[c + 1]]`.
#[derive(Debug, Clone)]
pub struct GridIndex {
    origin: [f64; 2],
    cell: f64,
    cols: usize,
    rows: usize,
    start: Vec<u32>,
    order: Vec<u32>,
}

impl GridIndex {
    /// Index the points `(xs[i], ys[i])` with square cells of side `cell`.
    pub fn build(xs: &[f64], ys: &[f64], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        assert_eq!(xs.len(), ys.len());
        let (mut minx, mut miny) = (f64::INFINITY, f64::INFINITY);
        let (mut maxx, mut maxy) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (&x, &y) in xs.iter().zip(ys) {
            minx = minx.min(x);
            miny = miny.min(y);
            maxx = maxx.max(x);
            maxy = maxy.max(y);
        }
        if xs.is_empty() {
            (minx, miny, maxx, maxy) = (0.0, 0.0, 0.0, 0.0);
        }
        let cols = ((maxx - minx) / cell).floor() as usize + 1;
        let rows = ((maxy - miny) / cell).floor() as usize + 1;
        let mut idx = GridIndex {
            origin: [minx, miny],
            cell,
            cols,
            rows,
            start: vec![0; cols * rows + 1],
            order: vec![0; xs.len()],
        };
        let cells: Vec<usize> = xs.iter().zip(ys).map(|(&x, &y)| idx.cell_id(x, y)).collect();
        for &c in &cells {
            idx.start[c + 1] += 1;
        }
        for c in 0..cols * rows {
            idx.start[c + 1] += idx.start[c];
        }
        let mut fill = idx.start.clone();
        for (i, &c) in cells.iter().enumerate() {
            idx.order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        idx
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    fn clamp_col(&self, x: f64) -> usize {
        (((x - self.origin[0]) / self.cell).floor().max(0.0) as usize).min(self.cols - 1)
    }

    fn clamp_row(&self, y: f64) -> usize {
        (((y - self.origin[1]) / self.cell).floor().max(0.0) as usize).min(self.rows - 1)
    }

    fn cell_id(&self, x: f64, y: f64) -> usize {
        self.clamp_row(y) * self.cols + self.clamp_col(x)
    }

    pub fn cell_points(&self, col: usize, row: usize) -> &[u32] {
        let c = row * self.cols + col;
        &self.order[self.start[c] as usize..self.start[c + 1] as usize]
    }

    /// Call `f(i)` for every point whose cell intersects the XY square of
    /// half-width `r` around `(x, y)`. Candidates still need a distance test.
    pub fn for_each_candidate(&self, x: f64, y: f64, r: f64, mut f: impl FnMut(usize)) {
        let c0 = self.clamp_col(x - r);
        let c1 = self.clamp_col(x + r);
        let r0 = self.clamp_row(y - r);
        let r1 = self.clamp_row(y + r);
        for row in r0..=r1 {
            for col in c0..=c1 {
                for &i in self.cell_points(col, row) {
                    f(i as usize);
                }
            }
        }
    }

    /// Indices of points within 3D distance `r` of `q`, sorted ascending.
    pub fn within_radius(&self, xs: &[f64], ys: &[f64], zs: &[f64], q: [f64; 3], r: f64) -> Vec<usize> {
        let r2 = r * r;
        let mut out = Vec::new();
        self.for_each_candidate(q[0], q[1], r, |i| {
            let d = [xs[i] - q[0], ys[i] - q[1], zs[i] - q[2]];
            if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r2 {
                out.push(i);
            }
        });
        out.sort_unstable();
        out
    }

    /// The `k` nearest points to `q` in 3D (the query point itself included
    /// if it is part of the indexed set), nearest first; ties by index.
    /// The search stops at `max_radius` horizontally.
    pub fn knn(
        &self,
        xs: &[f64],
        ys: &[f64],
        zs: &[f64],
        q: [f64; 3],
        k: usize,
        max_radius: f64,
    ) -> Vec<(usize, f64)> {
        let qc = self.clamp_col(q[0]) as isize;
        let qr = self.clamp_row(q[1]) as isize;
        let max_ring = (max_radius / self.cell).ceil() as isize + 1;
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let mut ring = 0isize;
        loop {
            let mut visit = |col: isize, row: isize| {
                if col < 0 || row < 0 || col >= self.cols as isize || row >= self.rows as isize {
                    return;
                }
                for &i in self.cell_points(col as usize, row as usize) {
                    let i = i as usize;
                    let d = [xs[i] - q[0], ys[i] - q[1], zs[i] - q[2]];
                    let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                    if best.len() == k && (d2, i) >= best[k - 1] {
                        continue;
                    }
                    let pos = best.partition_point(|e| *e < (d2, i));
                    best.insert(pos, (d2, i));
                    best.truncate(k);
                }
            };
            if ring == 0 {
                visit(qc, qr);
            } else {
                for col in qc - ring..=qc + ring {
                    visit(col, qr - ring);
                    visit(col, qr + ring);
                }
                for row in qr - ring + 1..=qr + ring - 1 {
                    visit(qc - ring, row);
                    visit(qc + ring, row);
                }
            }
            // Every unvisited point lies at least `ring * cell` away in XY.
            let covered = ring as f64 * self.cell;
            if best.len() == k && best[k - 1].0 <= covered * covered {
                break;
            }
            let exhausted = qc - ring <= 0
                && qr - ring <= 0
                && qc + ring >= self.cols as isize - 1
                && qr + ring >= self.rows as isize - 1;
            if exhausted || ring >= max_ring {
                break;
            }
            ring += 1;
        }
        best.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }
}
