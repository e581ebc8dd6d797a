//! Log-magnitude grids rendered as RGB rasters with baked-in axes.

use aegan_core::tfr::SAMPLE_RATE;
use ndarray::Array2;

pub const LEFT: usize = 30;
pub const RIGHT: usize = 8;
pub const TOP: usize = 6;
pub const BOTTOM: usize = 24;

const WHITE: [u8; 3] = [255, 255, 255];
const INK: [u8; 3] = [20, 20, 20];

/// Samples of the viridis colormap at ninths of the unit interval.
const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

/// Colour of `u` in [0, 1], linearly interpolated between anchors.
pub fn colormap(u: f64) -> [u8; 3] {
    let x = u.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [0, 1, 2].map(|c| (f64::from(a[c]) + f * (f64::from(b[c]) - f64::from(a[c]))).round() as u8)
}

/// 3×5 glyphs, one row per byte, high bit on the left.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        'k' => [4, 5, 6, 5, 5],
        'H' => [5, 5, 7, 5, 5],
        'z' => [0, 7, 2, 4, 7],
        's' => [3, 4, 2, 1, 6],
        _ => [0; 5],
    }
}

pub fn text_width(s: &str) -> usize {
    (s.chars().count() * 4).saturating_sub(1)
}

/// An 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self {
            width,
            height,
            rgb: fill.repeat(width * height),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn text(&mut self, x: usize, y: usize, s: &str) {
        for (k, ch) in s.chars().enumerate() {
            for (row, bits) in glyph(ch).iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        self.set(x + 4 * k + col, y + row, INK);
                    }
                }
            }
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>, png::EncodingError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header()?;
            w.write_image_data(&self.rgb)?;
        }
        Ok(out)
    }
}

/// Tick label without trailing zeros, e.g. `0.25`, `1.5`, `2`.
fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Smallest readable tick spacing for `duration` seconds over `pixels`.
fn time_step(duration: f64, pixels: usize) -> f64 {
    const STEPS: [f64; 10] = [0.05, 0.1, 0.2, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0];
    STEPS
        .into_iter()
        .find(|s| s / duration * pixels as f64 >= 36.0)
        .unwrap_or(STEPS[STEPS.len() - 1])
}

/// Renders a log-magnitude grid with values in [-1, 1]; rows are frequency
/// bins (lowest at the bottom), columns are frames `seconds_per_column` apart.
pub fn render(grid: &Array2<f64>, seconds_per_column: f64) -> Image {
    let (n_freq, n_time) = grid.dim();
    let mut img = Image::new(LEFT + n_time + RIGHT, TOP + n_freq + BOTTOM, WHITE);
    for k in 0..n_freq {
        for t in 0..n_time {
            let v = grid[[k, t]];
            img.set(LEFT + t, TOP + n_freq - 1 - k, colormap((v + 1.0) / 2.0));
        }
    }

    let axis_y = TOP + n_freq;
    for y in TOP..=axis_y {
        img.set(LEFT - 1, y, INK);
    }
    for x in LEFT - 1..LEFT + n_time {
        img.set(x, axis_y, INK);
    }

    // Frequency ticks every 2 kHz up to Nyquist.
    let nyquist_khz = f64::from(SAMPLE_RATE) / 2000.0;
    for khz in (0..=nyquist_khz as usize).step_by(2) {
        let y = axis_y - ((khz as f64 / nyquist_khz) * n_freq as f64).round() as usize;
        for x in LEFT - 4..LEFT - 1 {
            img.set(x, y, INK);
        }
        let label = khz.to_string();
        let ty = y.saturating_sub(2).clamp(0, img.height - 5);
        img.text(LEFT - 5 - text_width(&label), ty, &label);
    }
    img.text(1, axis_y + 3, "kHz");

    // Time ticks at a spacing that keeps labels apart.
    let duration = seconds_per_column * n_time as f64;
    if duration > 0.0 {
        let step = time_step(duration, n_time);
        let mut i = 0;
        loop {
            let t = i as f64 * step;
            if t > duration + 1e-9 {
                break;
            }
            let x = LEFT + ((t / duration) * n_time as f64).round() as usize;
            for y in axis_y + 1..axis_y + 4 {
                img.set(x.min(LEFT + n_time - 1), y, INK);
            }
            let label = tick_label(t);
            let w = text_width(&label);
            let tx = x.saturating_sub(w / 2).min(img.width - w);
            img.text(tx, axis_y + 6, &label);
            i += 1;
        }
    }
    img.text(LEFT + n_time - text_width("s"), axis_y + 14, "s");
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), VIRIDIS[0]);
        assert_eq!(colormap(1.0), VIRIDIS[8]);
        assert_eq!(colormap(-3.0), VIRIDIS[0]);
    }

    #[test]
    fn tick_labels_are_trimmed() {
        assert_eq!(tick_label(0.0), "0");
        assert_eq!(tick_label(0.25), "0.25");
        assert_eq!(tick_label(1.5), "1.5");
        assert_eq!(tick_label(2.0), "2");
    }

    #[test]
    fn floor_grid_renders_one_colour() {
        let g = Array2::from_elem((16, 16), -1.0);
        let img = render(&g, 0.01);
        let floor = colormap(0.0);
        for y in TOP..TOP + 16 {
            for x in LEFT..LEFT + 16 {
                assert_eq!(img.pixel(x, y), floor);
            }
        }
    }
}
