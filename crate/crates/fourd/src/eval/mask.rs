//! Object masks from projected foreground pixels: rasterize, bridge
//! small gaps with a morphological close, and keep the largest connected
//! region. The result is for visual inspection, not for scoring.

/// Binary image, row major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    fn empty(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![false; (width * height) as usize] }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Binary PGM (P5), foreground 255 on background 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| if v { 255u8 } else { 0 }));
        out
    }
}

/// Offsets of a filled disk of the given radius, both axes.
fn disk_offsets(radius: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy <= radius * radius {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn dilate(src: &Mask, offsets: &[(i64, i64)]) -> Mask {
    let mut out = Mask::empty(src.width, src.height);
    for y in 0..src.height as i64 {
        for x in 0..src.width as i64 {
            if !src.get(x as u32, y as u32) {
                continue;
            }
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < src.width as i64 && ny < src.height as i64 {
                    out.set(nx as u32, ny as u32, true);
                }
            }
        }
    }
    out
}

fn erode(src: &Mask, offsets: &[(i64, i64)]) -> Mask {
    // Offsets falling outside the image are skipped, so a shape touching
    // the border is not eaten from that side.
    let mut out = Mask::empty(src.width, src.height);
    for y in 0..src.height as i64 {
        'pix: for x in 0..src.width as i64 {
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= src.width as i64 || ny >= src.height as i64 {
                    continue;
                }
                if !src.get(nx as u32, ny as u32) {
                    continue 'pix;
                }
            }
            out.set(x as u32, y as u32, true);
        }
    }
    out
}

/// Largest 8-connected foreground region; earlier scan order wins ties.
fn largest_component(src: &Mask) -> Mask {
    let n = src.data.len();
    let mut label = vec![usize::MAX; n];
    let mut best: Option<(usize, usize)> = None; // (size, component id)
    let mut next = 0usize;
    let w = src.width as i64;
    let h = src.height as i64;
    for start in 0..n {
        if !src.data[start] || label[start] != usize::MAX {
            continue;
        }
        let id = next;
        next += 1;
        let mut stack = vec![start];
        label[start] = id;
        let mut size = 0usize;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if src.data[j] && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        if best.map_or(true, |(bs, _)| size > bs) {
            best = Some((size, id));
        }
    }
    let mut out = Mask::empty(src.width, src.height);
    if let Some((_, id)) = best {
        for i in 0..n {
            out.data[i] = label[i] == id;
        }
    }
    out
}

/// Radius of the closing disk, pixels.
const CLOSE_RADIUS: i64 = 3;

/// Rasterizes the pixel set (out-of-bounds pixels are dropped), closes
/// gaps up to the disk radius, and keeps the largest 8-connected region.
pub fn points_to_mask(pixels: &[(u32, u32)], width: u32, height: u32) -> Mask {
    assert!(width > 0 && height > 0);
    let mut raster = Mask::empty(width, height);
    for &(x, y) in pixels {
        if x < width && y < height {
            raster.set(x, y, true);
        }
    }
    let offsets = disk_offsets(CLOSE_RADIUS);
    let closed = erode(&dilate(&raster, &offsets), &offsets);
    largest_component(&closed)
}
