//! Binary foreground masks.

/// Per-pixel foreground/background mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, value: bool) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![value; (width * height) as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        BinaryMask {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[(y * self.width + x) as usize] = value;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Keep only the largest 4-connected foreground component.
    /// Ties break toward the component whose seed pixel comes first in
    /// row-major order, so the result is deterministic.
    pub fn largest_connected_component(&self) -> BinaryMask {
        let w = self.width as usize;
        let h = self.height as usize;
        let mut label = vec![u32::MAX; w * h];
        let mut sizes: Vec<usize> = Vec::new();
        let mut stack = Vec::new();

        for start in 0..w * h {
            if !self.data[start] || label[start] != u32::MAX {
                continue;
            }
            let id = sizes.len() as u32;
            let mut size = 0usize;
            stack.push(start);
            label[start] = id;
            while let Some(p) = stack.pop() {
                size += 1;
                let (x, y) = (p % w, p / w);
                let mut visit = |q: usize| {
                    if self.data[q] && label[q] == u32::MAX {
                        label[q] = id;
                        stack.push(q);
                    }
                };
                if x > 0 {
                    visit(p - 1);
                }
                if x + 1 < w {
                    visit(p + 1);
                }
                if y > 0 {
                    visit(p - w);
                }
                if y + 1 < h {
                    visit(p + w);
                }
            }
            sizes.push(size);
        }

        let Some(best) = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i as u32)
        else {
            return self.clone();
        };
        let data = label.iter().map(|&l| l == best).collect();
        BinaryMask::from_data(self.width, self.height, data)
    }
}
