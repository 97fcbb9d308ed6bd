//! RGB images stored channel-first with values in [0, 1].

use semocc_tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    /// `[3, height, width]` row-major.
    data: Vec<f64>,
}

impl Image {
    pub fn black(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == 3 * height * width).then_some(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f64) {
        self.data[(c * self.height + row) * self.width + col] = v;
    }

    pub fn rgb(&self, row: usize, col: usize) -> [f64; 3] {
        std::array::from_fn(|c| self.get(c, row, col))
    }

    pub fn set_rgb(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.set(c, row, col, v);
        }
    }

    pub fn clamp(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![3, self.height, self.width], self.data.clone()).expect("image shape")
    }
}
