//! Small helpers shared by the pixel-lattice algorithms.

/// Row-major 4-neighbors of `idx` on a `height` x `width` grid.
#[inline]
pub fn neighbors4(idx: usize, height: usize, width: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (idx / width, idx % width);
    let up = (r > 0).then(|| idx - width);
    let left = (c > 0).then(|| idx - 1);
    let right = (c + 1 < width).then(|| idx + 1);
    let down = (r + 1 < height).then(|| idx + width);
    [up, left, right, down].into_iter().flatten()
}

/// Whether `idx` lies on the outer frame of the grid.
#[inline]
pub fn on_border(idx: usize, height: usize, width: usize) -> bool {
    let (r, c) = (idx / width, idx % width);
    r == 0 || c == 0 || r + 1 == height || c + 1 == width
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}
