/// Union-find forest tracking, per component, its size and the largest edge
/// weight merged into it (the internal difference).
#[derive(Debug, Clone)]
pub(crate) struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
    size: Vec<u32>,
    internal: Vec<f64>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    pub fn size(&self, root: u32) -> u32 {
        self.size[root as usize]
    }

    pub fn internal(&self, root: u32) -> f64 {
        self.internal[root as usize]
    }

    /// Joins two roots through an edge of weight `w`; returns the new root.
    pub fn union(&mut self, a: u32, b: u32, w: f64) -> u32 {
        let (hi, lo) = if self.rank[a as usize] >= self.rank[b as usize] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[lo as usize] = hi;
        if self.rank[hi as usize] == self.rank[lo as usize] {
            self.rank[hi as usize] += 1;
        }
        self.size[hi as usize] += self.size[lo as usize];
        let int = self.internal[a as usize].max(self.internal[b as usize]).max(w);
        self.internal[hi as usize] = int;
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_tracks_size_and_internal_difference() {
        let mut ds = DisjointSet::new(4);
        let r = ds.union(0, 1, 0.3);
        let r = ds.union(r, 2, 0.1);
        assert_eq!(ds.find(2), r);
        assert_eq!(ds.size(r), 3);
        assert_eq!(ds.internal(r), 0.3);
        assert_ne!(ds.find(3), r);
    }
}
