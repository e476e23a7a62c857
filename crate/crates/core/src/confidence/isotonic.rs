//! Pool-adjacent-violators for a non-decreasing least-squares fit.

/// A pooled block: summed x and y and the number of pooled samples.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub sum_x: f64,
    pub sum_y: f64,
    pub weight: f64,
}

impl Block {
    pub fn x(&self) -> f64 {
        self.sum_x / self.weight
    }

    pub fn y(&self) -> f64 {
        self.sum_y / self.weight
    }

    fn merge(&mut self, other: Block) {
        self.sum_x += other.sum_x;
        self.sum_y += other.sum_y;
        self.weight += other.weight;
    }
}

/// Fits `points` (already sorted by x, ties by y) and returns the pooled
/// blocks in order. Points sharing an x value start in one block, so the
/// fit is a function of x.
pub fn pava(points: &[(f64, f64)]) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::with_capacity(points.len());
    let mut i = 0;
    while i < points.len() {
        let mut b = Block {
            sum_x: 0.0,
            sum_y: 0.0,
            weight: 0.0,
        };
        let x = points[i].0;
        while i < points.len() && points[i].0 == x {
            b.sum_x += points[i].0;
            b.sum_y += points[i].1;
            b.weight += 1.0;
            i += 1;
        }
        blocks.push(b);
        while blocks.len() >= 2 {
            let n = blocks.len();
            if blocks[n - 2].y() > blocks[n - 1].y() {
                let last = blocks.pop().unwrap();
                blocks.last_mut().unwrap().merge(last);
            } else {
                break;
            }
        }
    }
    blocks
}
