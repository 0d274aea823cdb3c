//! 8-connected component labeling of binary masks.

use crate::geometry::{BinaryMask, PixelBox};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub bounds: PixelBox,
    pub pixels: usize,
}

/// Label 8-connected foreground regions. Returns a per-pixel label map
/// (0 = background, components numbered from 1 in raster order of their
/// first pixel) and the components themselves.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<Component>) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut labels = vec![0u32; mask.bits().len()];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            if !mask.bits()[idx] || labels[idx] != 0 {
                continue;
            }
            let id = components.len() as u32 + 1;
            let mut comp = Component {
                bounds: PixelBox::new(x as u32, y as u32, x as u32 + 1, y as u32 + 1),
                pixels: 0,
            };
            labels[idx] = id;
            stack.push((x, y));
            while let Some((cx, cy)) = stack.pop() {
                comp.pixels += 1;
                let b = &mut comp.bounds;
                b.x1 = b.x1.min(cx as u32);
                b.y1 = b.y1.min(cy as u32);
                b.x2 = b.x2.max(cx as u32 + 1);
                b.y2 = b.y2.max(cy as u32 + 1);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (cx + dx, cy + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let n = (ny * w + nx) as usize;
                        if mask.bits()[n] && labels[n] == 0 {
                            labels[n] = id;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            components.push(comp);
        }
    }
    (labels, components)
}
