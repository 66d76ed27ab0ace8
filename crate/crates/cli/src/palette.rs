//! Fixed 256-entry colour table for label overlays.
//!
//! Entry 0 (background) is black and entry 255 (ignore) is white. Every
//! other entry spreads the bits of its index across the high bits of the
//! three channels, which keeps neighbouring class ids visually distinct.

pub fn color(class: u8) -> [u8; 3] {
    if class == 255 {
        return [255, 255, 255];
    }
    let mut rgb = [0u8; 3];
    let mut id = class;
    for shift in (0..8).rev() {
        for (channel, value) in rgb.iter_mut().enumerate() {
            *value |= ((id >> channel) & 1) << shift;
        }
        id >>= 3;
    }
    rgb
}
