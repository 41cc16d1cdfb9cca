//! Color classes shared by the simulator, segmenter and descriptor.
//!
//! The floor pattern consists of red, green, blue and white granulate blobs
//! on a near-black background. Segmentation masks use one label per class
//! with `Bg` for everything that is not part of a blob.

/// Per-pixel segmentation class. The `u8` values are the on-disk codes used
/// by PGM mask files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ColorClass {
    Bg = 0,
    Red = 1,
    Green = 2,
    Blue = 3,
    White = 4,
}

impl ColorClass {
    pub const ALL: [ColorClass; 5] = [
        ColorClass::Bg,
        ColorClass::Red,
        ColorClass::Green,
        ColorClass::Blue,
        ColorClass::White,
    ];

    pub fn from_code(code: u8) -> Option<ColorClass> {
        match code {
            0 => Some(ColorClass::Bg),
            1 => Some(ColorClass::Red),
            2 => Some(ColorClass::Green),
            3 => Some(ColorClass::Blue),
            4 => Some(ColorClass::White),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn is_colored(self) -> bool {
        self != ColorClass::Bg
    }

    /// Blob color for a non-background class.
    pub fn blob_color(self) -> Option<BlobColor> {
        match self {
            ColorClass::Bg => None,
            ColorClass::Red => Some(BlobColor::Red),
            ColorClass::Green => Some(BlobColor::Green),
            ColorClass::Blue => Some(BlobColor::Blue),
            ColorClass::White => Some(BlobColor::White),
        }
    }
}

/// Color of a granulate blob. The `u8` values are the on-disk codes used by
/// the floor file format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum BlobColor {
    Red = 0,
    Green = 1,
    Blue = 2,
    White = 3,
}

impl BlobColor {
    pub const ALL: [BlobColor; 4] = [
        BlobColor::Red,
        BlobColor::Green,
        BlobColor::Blue,
        BlobColor::White,
    ];

    pub fn from_code(code: u8) -> Option<BlobColor> {
        match code {
            0 => Some(BlobColor::Red),
            1 => Some(BlobColor::Green),
            2 => Some(BlobColor::Blue),
            3 => Some(BlobColor::White),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn class(self) -> ColorClass {
        match self {
            BlobColor::Red => ColorClass::Red,
            BlobColor::Green => ColorClass::Green,
            BlobColor::Blue => ColorClass::Blue,
            BlobColor::White => ColorClass::White,
        }
    }

    /// Index 0..4 used for descriptor one-hot and histogram slots.
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Reference RGB values for the background and the four blob colors.
///
/// The renderer paints blobs with these nominal values and the reference
/// segmenter classifies pixels against them, so the two sides agree by
/// construction. Both are configurable independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Palette {
    pub background: [u8; 3],
    pub red: [u8; 3],
    pub green: [u8; 3],
    pub blue: [u8; 3],
    pub white: [u8; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            background: [8, 8, 8],
            red: [200, 40, 40],
            green: [40, 170, 60],
            blue: [50, 60, 190],
            white: [210, 210, 205],
        }
    }
}

impl Palette {
    pub fn rgb_of(&self, class: ColorClass) -> [u8; 3] {
        match class {
            ColorClass::Bg => self.background,
            ColorClass::Red => self.red,
            ColorClass::Green => self.green,
            ColorClass::Blue => self.blue,
            ColorClass::White => self.white,
        }
    }

    pub fn blob_rgb(&self, color: BlobColor) -> [u8; 3] {
        self.rgb_of(color.class())
    }
}

pub(crate) fn rgb_distance_sq(a: [u8; 3], b: [u8; 3]) -> i32 {
    let dr = a[0] as i32 - b[0] as i32;
    let dg = a[1] as i32 - b[1] as i32;
    let db = a[2] as i32 - b[2] as i32;
    dr * dr + dg * dg + db * db
}
