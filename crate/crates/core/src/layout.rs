//! Bounding boxes, named layouts and the deterministic layout edits
//! (move, enlarge with bottom-left anchor, center swap).
//!
//! Coordinates are integer pixel corners, origin top-left, y down. A box
//! covers the half-open area `[x0, x1) x [y0, y1)`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::image::Dims;
use crate::scalar::Scalar;

/// Default translation for deterministic moves.
pub const DEFAULT_MOVE_STEP: i32 = 100;
/// Default scale for deterministic enlargement.
pub const DEFAULT_RESIZE_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("degenerate box [{0}, {1}, {2}, {3}]")]
    DegenerateBox(i64, i64, i64, i64),
    #[error("cannot parse layout: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl BoundingBox {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Result<Self, LayoutError> {
        if x0 < x1 && y0 < y1 {
            Ok(BoundingBox { x0, y0, x1, y1 })
        } else {
            Err(LayoutError::DegenerateBox(x0 as i64, y0 as i64, x1 as i64, y1 as i64))
        }
    }

    pub fn width(&self) -> i32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }

    /// Integer center, halves rounded up.
    pub fn center(&self) -> (i32, i32) {
        (
            (self.x0 + self.x1 + 1).div_euclid(2),
            (self.y0 + self.y1 + 1).div_euclid(2),
        )
    }

    pub fn within(&self, canvas: Dims) -> bool {
        self.x0 >= 0 && self.y0 >= 0 && self.x1 <= canvas.width as i32 && self.y1 <= canvas.height as i32
    }

    pub fn overlaps(&self, other: &BoundingBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn as_array(&self) -> [i32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// Same size box whose center is `c` (inverse of [`BoundingBox::center`]).
    fn recentered(&self, (cx, cy): (i32, i32)) -> BoundingBox {
        let (w, h) = (self.width(), self.height());
        let x0 = cx - (w + 1) / 2;
        let y0 = cy - (h + 1) / 2;
        BoundingBox {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
        }
    }

    /// Shift back inside the canvas keeping the size; clips only when the box
    /// is larger than the canvas.
    pub fn translate_into(&self, canvas: Dims) -> BoundingBox {
        fn axis(lo: i32, hi: i32, limit: i32) -> (i32, i32) {
            let len = (hi - lo).min(limit);
            let lo = lo.clamp(0, limit - len);
            (lo, lo + len)
        }
        let (x0, x1) = axis(self.x0, self.x1, canvas.width as i32);
        let (y0, y1) = axis(self.y0, self.y1, canvas.height as i32);
        BoundingBox { x0, y0, x1, y1 }
    }

    /// Intersect with the canvas; may shrink (or empty) the box.
    pub fn clip_to(&self, canvas: Dims) -> Result<BoundingBox, LayoutError> {
        BoundingBox::new(
            self.x0.max(0),
            self.y0.max(0),
            self.x1.min(canvas.width as i32),
            self.y1.min(canvas.height as i32),
        )
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x0, self.y0, self.x1, self.y1)
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.as_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x0, y0, x1, y1] = <[i32; 4]>::deserialize(d)?;
        BoundingBox::new(x0, y0, x1, y1).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

impl Direction {
    /// First direction word in a move instruction, if any.
    pub fn from_instruction(text: &str) -> Option<Direction> {
        words(text).find_map(|w| match w.as_str() {
            "left" | "leftward" | "leftwards" => Some(Direction::Left),
            "right" | "rightward" | "rightwards" => Some(Direction::Right),
            "up" | "upward" | "upwards" | "higher" => Some(Direction::Up),
            "down" | "downward" | "downwards" | "lower" => Some(Direction::Down),
            _ => None,
        })
    }
}

/// Whether a resize instruction grows or shrinks its object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeSense {
    Enlarge,
    Shrink,
}

impl ResizeSense {
    pub fn from_instruction(text: &str) -> Option<ResizeSense> {
        words(text).find_map(|w| match w.as_str() {
            "enlarge" | "larger" | "bigger" | "big" | "increase" | "grow" | "expand" | "magnify" => {
                Some(ResizeSense::Enlarge)
            }
            "shrink" | "smaller" | "small" | "reduce" | "decrease" | "minimize" | "tiny" => Some(ResizeSense::Shrink),
            _ => None,
        })
    }
}

/// Translate by `step` pixels along one axis, then push back inside the
/// canvas preserving width and height.
pub fn move_box(b: &BoundingBox, direction: Direction, step: i32, canvas: Dims) -> BoundingBox {
    let (dx, dy) = match direction {
        Direction::Left => (-step, 0),
        Direction::Right => (step, 0),
        Direction::Up => (0, -step),
        Direction::Down => (0, step),
    };
    BoundingBox {
        x0: b.x0 + dx,
        y0: b.y0 + dy,
        x1: b.x1 + dx,
        y1: b.y1 + dy,
    }
    .translate_into(canvas)
}

/// Scale width and height by `factor` about the bottom-left corner `(x0, y1)`,
/// clipping overshoot at the canvas edge.
pub fn resize_box<S: Scalar>(b: &BoundingBox, factor: S, canvas: Dims) -> Result<BoundingBox, LayoutError> {
    let scale = |len: i32| (S::from_i64(len as i64) * factor).round_half_up_i64();
    let (w, h) = (scale(b.width()), scale(b.height()));
    let (x1, y0) = (b.x0 as i64 + w, b.y1 as i64 - h);
    if w < 1 || h < 1 || factor <= S::zero() {
        return Err(LayoutError::DegenerateBox(b.x0 as i64, y0, x1, b.y1 as i64));
    }
    let clamp = |v: i64| v.clamp(i32::MIN as i64, i32::MAX as i64) as i32;
    BoundingBox::new(b.x0, clamp(y0), clamp(x1), b.y1)?.clip_to(canvas)
}

/// Exchange the centers of two boxes; each keeps its own size.
pub fn swap_boxes(a: &BoundingBox, b: &BoundingBox, canvas: Dims) -> (BoundingBox, BoundingBox) {
    (
        a.recentered(b.center()).translate_into(canvas),
        b.recentered(a.center()).translate_into(canvas),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Ordered named boxes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
}

impl Layout {
    pub fn new(entries: impl IntoIterator<Item = (String, BoundingBox)>) -> Self {
        Layout {
            entries: entries
                .into_iter()
                .map(|(name, bbox)| LayoutEntry { name, bbox })
                .collect(),
        }
    }

    pub fn single(name: impl Into<String>, bbox: BoundingBox) -> Self {
        Layout::new([(name.into(), bbox)])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&BoundingBox> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.bbox)
    }

    pub fn push(&mut self, name: impl Into<String>, bbox: BoundingBox) {
        self.entries.push(LayoutEntry {
            name: name.into(),
            bbox,
        });
    }

    /// Names in sorted order, duplicates kept.
    pub fn name_multiset(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.entries.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        names
    }

    /// Index pairs of overlapping boxes.
    pub fn overlapping_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.entries.len() {
            for j in i + 1..self.entries.len() {
                if self.entries[i].bbox.overlaps(&self.entries[j].bbox) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Map every box from one canvas size to another, rounding corners.
    pub fn rescale(&self, from: Dims, to: Dims) -> Result<Layout, LayoutError> {
        if from == to {
            return Ok(self.clone());
        }
        let sx = to.width as f64 / from.width as f64;
        let sy = to.height as f64 / from.height as f64;
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let b = &e.bbox;
                let bbox = BoundingBox::new(
                    (b.x0 as f64 * sx).round() as i32,
                    (b.y0 as f64 * sy).round() as i32,
                    (b.x1 as f64 * sx).round() as i32,
                    (b.y1 as f64 * sy).round() as i32,
                )?;
                Ok(LayoutEntry {
                    name: e.name.clone(),
                    bbox,
                })
            })
            .collect::<Result<_, LayoutError>>()?;
        Ok(Layout { entries })
    }
}

/// Python-style quoting as used in the layout prompts.
fn quote_name(name: &str) -> String {
    if name.contains('\'') && !name.contains('"') {
        format!("\"{name}\"")
    } else {
        format!("'{}'", name.replace('\'', "\\'"))
    }
}

impl fmt::Display for Layout {
    /// Tuple-list form: `[('a car', [21, 281, 232, 440])]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "({}, {})", quote_name(&e.name), e.bbox)?;
        }
        f.write_str("]")
    }
}

/// Recursive-descent reader for tuple-list and JSON layout syntax.
struct Reader<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> Option<()> {
        (self.peek()? == c).then(|| self.pos += 1)
    }

    fn string(&mut self) -> Option<String> {
        let quote = self.peek()?;
        if quote != b'"' && quote != b'\'' {
            return None;
        }
        self.pos += 1;
        let mut out = Vec::new();
        while let Some(&c) = self.src.get(self.pos) {
            self.pos += 1;
            match c {
                b'\\' => {
                    out.push(*self.src.get(self.pos)?);
                    self.pos += 1;
                }
                c if c == quote => return String::from_utf8(out).ok(),
                c => out.push(c),
            }
        }
        None
    }

    fn number(&mut self) -> Option<i32> {
        self.ws();
        let start = self.pos;
        while let Some(&c) = self.src.get(self.pos) {
            if c.is_ascii_digit() || matches!(c, b'-' | b'+' | b'.' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).ok()?;
        let v: f64 = text.parse().ok()?;
        (v.is_finite() && v.abs() < 1e9).then(|| v.round() as i32)
    }

    fn bbox(&mut self) -> Option<[i32; 4]> {
        self.eat(b'[')?;
        let mut v = [0; 4];
        for (i, slot) in v.iter_mut().enumerate() {
            if i > 0 {
                self.eat(b',')?;
            }
            *slot = self.number()?;
        }
        self.eat(b']')?;
        Some(v)
    }

    fn entry(&mut self) -> Option<(String, [i32; 4])> {
        match self.peek()? {
            open @ (b'(' | b'[') => {
                self.pos += 1;
                let name = self.string()?;
                self.eat(b',')?;
                let b = self.bbox()?;
                self.eat(if open == b'(' { b')' } else { b']' })?;
                Some((name, b))
            }
            b'{' => {
                self.pos += 1;
                let (mut name, mut bx) = (None, None);
                loop {
                    let key = self.string()?;
                    self.eat(b':')?;
                    match key.as_str() {
                        "name" | "object" => name = Some(self.string()?),
                        "box" | "bbox" => bx = Some(self.bbox()?),
                        _ => return None,
                    }
                    if self.eat(b',').is_none() {
                        break;
                    }
                }
                self.eat(b'}')?;
                Some((name?, bx?))
            }
            _ => None,
        }
    }

    fn list(&mut self) -> Option<Vec<(String, [i32; 4])>> {
        self.eat(b'[')?;
        let mut out = Vec::new();
        if self.eat(b']').is_some() {
            return Some(out);
        }
        loop {
            out.push(self.entry()?);
            if self.eat(b',').is_none() {
                break;
            }
            // Trailing comma.
            if self.peek() == Some(b']') {
                break;
            }
        }
        self.eat(b']')?;
        Some(out)
    }
}

/// Parse a layout written in tuple-list or JSON form. Boxes are not clamped.
pub fn parse_layout(text: &str) -> Result<Layout, LayoutError> {
    let mut r = Reader {
        src: text.as_bytes(),
        pos: 0,
    };
    let raw = r
        .list()
        .ok_or_else(|| LayoutError::Parse(text.chars().take(80).collect()))?;
    if r.peek().is_some() {
        return Err(LayoutError::Parse(format!("trailing text after layout in {text:?}")));
    }
    raw_to_layout(raw)
}

fn raw_to_layout(raw: Vec<(String, [i32; 4])>) -> Result<Layout, LayoutError> {
    let entries = raw
        .into_iter()
        .map(|(name, [x0, y0, x1, y1])| {
            if name.trim().is_empty() {
                return Err(LayoutError::Parse("empty object name".into()));
            }
            Ok((name, BoundingBox::new(x0, y0, x1, y1)?))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Layout::new(entries))
}

/// Pull a layout out of a free-form LLM answer: after the last
/// `Output bounding boxes:` marker if present, else the last well-formed
/// non-empty list anywhere in the text.
pub fn extract_layout(answer: &str) -> Result<Layout, LayoutError> {
    const MARKER: &str = "output bounding boxes:";
    let lower = answer.to_lowercase();
    let tail = match lower.rfind(MARKER) {
        Some(i) => &answer[i + MARKER.len()..],
        None => answer,
    };
    let bytes = tail.as_bytes();
    let mut found = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let mut r = Reader { src: bytes, pos: i };
            if let Some(list) = r.list().filter(|l| !l.is_empty()) {
                found = Some(list);
                i = r.pos;
                continue;
            }
        }
        i += 1;
    }
    let raw = found.ok_or_else(|| LayoutError::Parse("no bounding box list in answer".into()))?;
    raw_to_layout(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CANVAS: Dims = Dims::square(512);

    fn bb(x0: i32, y0: i32, x1: i32, y1: i32) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn car_moves_right() {
        assert_eq!(
            move_box(&bb(21, 281, 232, 440), Direction::Right, 100, CANVAS),
            bb(121, 281, 332, 440)
        );
    }

    #[test]
    fn move_clamps_by_translating_back() {
        assert_eq!(
            move_box(&bb(450, 10, 510, 60), Direction::Right, 100, CANVAS),
            bb(452, 10, 512, 60)
        );
        assert_eq!(
            move_box(&bb(5, 5, 20, 30), Direction::Up, 100, CANVAS),
            bb(5, 0, 20, 25)
        );
    }

    #[test]
    fn left_then_right_is_identity() {
        let b = bb(200, 200, 260, 240);
        let there = move_box(&b, Direction::Left, 37, CANVAS);
        assert_eq!(move_box(&there, Direction::Right, 37, CANVAS), b);
    }

    #[test]
    fn dog_enlarges_about_bottom_left() {
        assert_eq!(
            resize_box(&bb(150, 250, 250, 300), 1.5, CANVAS).unwrap(),
            bb(150, 225, 300, 300)
        );
        assert_eq!(
            resize_box(&bb(150, 250, 250, 300), 0.5, CANVAS).unwrap(),
            bb(150, 275, 200, 300)
        );
        assert_eq!(
            resize_box(&bb(150, 250, 250, 300), 1.0f32, CANVAS).unwrap(),
            bb(150, 250, 250, 300)
        );
    }

    #[test]
    fn resize_clips_and_rejects_collapse() {
        assert_eq!(
            resize_box(&bb(400, 100, 500, 200), 2.0, CANVAS).unwrap(),
            bb(400, 0, 512, 200)
        );
        assert!(matches!(
            resize_box(&bb(10, 10, 12, 12), 0.1, CANVAS),
            Err(LayoutError::DegenerateBox(..))
        ));
    }

    #[test]
    fn chair_lamp_swap() {
        let (chair, lamp) = swap_boxes(&bb(100, 350, 200, 450), &bb(300, 200, 360, 300), CANVAS);
        assert_eq!(chair, bb(280, 200, 380, 300));
        assert_eq!(lamp, bb(120, 350, 180, 450));
    }

    #[test]
    fn swap_identical_is_noop() {
        let a = bb(10, 20, 33, 47);
        assert_eq!(swap_boxes(&a, &a, CANVAS), (a, a));
    }

    #[test]
    fn layout_text_forms() {
        let l = parse_layout(r#"[("bed", [50, 300, 450, 450]), ('pillow', [200, 200, 300, 230])]"#).unwrap();
        assert_eq!(
            l.to_string(),
            "[('bed', [50, 300, 450, 450]), ('pillow', [200, 200, 300, 230])]"
        );
        let j = parse_layout(r#"[["bed",[50,300,450,450]],{"name":"pillow","box":[200,200,300,230]}]"#).unwrap();
        assert_eq!(j, l);
        assert_eq!(
            serde_json::to_string(&l.entries[0]).unwrap(),
            r#"{"name":"bed","box":[50,300,450,450]}"#
        );
        assert!(parse_layout("[('x', [1, 2, 3])]").is_err());
        assert!(parse_layout("[('x', [5, 2, 3, 9])]").is_err());
    }

    #[test]
    fn extract_from_chatty_answer() {
        let ans =
            "The car should go right by about 100px.\nOutput bounding boxes: [('a car', [121, 281, 332.4, 440])]\n";
        assert_eq!(
            extract_layout(ans).unwrap(),
            Layout::single("a car", bb(121, 281, 332, 440))
        );
        let noisy = "Boxes were [('a', [0, 0, 5, 5])], final: [(\"a\", [1, 1, 6, 6])]";
        assert_eq!(extract_layout(noisy).unwrap(), Layout::single("a", bb(1, 1, 6, 6)));
        assert!(extract_layout("no idea []").is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0i32..511, 0i32..511, 1i32..512, 1i32..512).prop_map(|(x, y, w, h)| {
            let x1 = (x + w).min(512);
            let y1 = (y + h).min(512);
            bb(x, y, x1.max(x + 1), y1.max(y + 1))
        })
    }

    fn arb_dir() -> impl Strategy<Value = Direction> {
        prop_oneof![
            Just(Direction::Left),
            Just(Direction::Right),
            Just(Direction::Up),
            Just(Direction::Down)
        ]
    }

    proptest! {
        #[test]
        fn edits_keep_boxes_valid(a in arb_box(), b in arb_box(), d in arb_dir(), step in 0i32..600, f in 0.05f64..4.0) {
            let m = move_box(&a, d, step, CANVAS);
            prop_assert!(m.within(CANVAS) && m.x0 < m.x1 && m.y0 < m.y1);
            prop_assert_eq!((m.width(), m.height()), (a.width(), a.height()));
            if let Ok(r) = resize_box(&a, f, CANVAS) {
                prop_assert!(r.within(CANVAS) && r.x0 < r.x1 && r.y0 < r.y1);
                prop_assert_eq!((r.x0, r.y1), (a.x0, a.y1));
            }
            let (sa, sb) = swap_boxes(&a, &b, CANVAS);
            prop_assert!(sa.within(CANVAS) && sb.within(CANVAS));
        }

        #[test]
        fn unclamped_swap_is_involution(a in arb_box(), b in arb_box()) {
            let big = Dims::square(1 << 20);
            let shift = |x: &BoundingBox| bb(x.x0 + 4096, x.y0 + 4096, x.x1 + 4096, x.y1 + 4096);
            let (a, b) = (shift(&a), shift(&b));
            let (sa, sb) = swap_boxes(&a, &b, big);
            prop_assert_eq!((sa.width(), sa.height()), (a.width(), a.height()));
            prop_assert_eq!((sb.width(), sb.height()), (b.width(), b.height()));
            prop_assert_eq!(sa.center(), b.center());
            let (ra, rb) = swap_boxes(&sa, &sb, big);
            prop_assert_eq!((ra, rb), (a, b));
        }

        #[test]
        fn layout_text_roundtrip(boxes in proptest::collection::vec(arb_box(), 1..5), names in proptest::collection::vec("[a-z' ]{1,12}", 5)) {
            let l = Layout::new(boxes.into_iter().zip(names).map(|(b, n)| (format!("x{n}"), b)));
            prop_assert_eq!(&parse_layout(&l.to_string()).unwrap(), &l);
        }
    }

    #[test]
    fn instruction_keywords() {
        assert_eq!(
            Direction::from_instruction("Move the car to the right."),
            Some(Direction::Right)
        );
        assert_eq!(Direction::from_instruction("move the dog upwards"), Some(Direction::Up));
        assert_eq!(Direction::from_instruction("move the lamp"), None);
        assert_eq!(
            ResizeSense::from_instruction("Enlarge the dog."),
            Some(ResizeSense::Enlarge)
        );
        assert_eq!(
            ResizeSense::from_instruction("make the cup smaller"),
            Some(ResizeSense::Shrink)
        );
        assert_eq!(ResizeSense::from_instruction("resize the cup"), None);
    }
}
