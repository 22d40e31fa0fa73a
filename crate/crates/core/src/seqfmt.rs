//! Multimodal token vocabulary and the T-V-A, T-A-V and modality-alternate
//! (MASF) sequence formats.
//!
//! Every format opens with `[TXT]` and the text tokens and wraps each frame's
//! visual and audio tokens in `[BOVi] … [EOVi]` and `[BOAi] … [EOAi]`. The
//! formats differ only in frame order: T-V-A places all visual frames before
//! all audio frames, T-A-V the reverse, MASF alternates them frame by frame.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeqFormat {
    Tva,
    Tav,
    Masf,
}

impl SeqFormat {
    pub const ALL: [SeqFormat; 3] = [SeqFormat::Tva, SeqFormat::Tav, SeqFormat::Masf];

    pub fn name(self) -> &'static str {
        match self {
            SeqFormat::Tva => "TVA",
            SeqFormat::Tav => "TAV",
            SeqFormat::Masf => "MASF",
        }
    }

    /// Case-insensitive; accepts `TVA`, `T-V-A`, `TAV`, `T-A-V`, `MASF`.
    pub fn from_name(s: &str) -> Result<Self> {
        let norm: alloc::string::String = s.chars().filter(|c| *c != '-').flat_map(char::to_uppercase).collect();
        match norm.as_str() {
            "TVA" => Ok(SeqFormat::Tva),
            "TAV" => Ok(SeqFormat::Tav),
            "MASF" => Ok(SeqFormat::Masf),
            _ => Err(Error::Config(format!("unknown sequence format {s:?}"))),
        }
    }
}

impl fmt::Display for SeqFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenKind {
    Text,
    Visual,
    Audio,
    Special,
}

/// Special tokens; frame numbers are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Special {
    Txt,
    Bov(usize),
    Eov(usize),
    Boa(usize),
    Eoa(usize),
    Pad,
}

impl fmt::Display for Special {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Special::Txt => write!(f, "[TXT]"),
            Special::Bov(i) => write!(f, "[BOV{i}]"),
            Special::Eov(i) => write!(f, "[EOV{i}]"),
            Special::Boa(i) => write!(f, "[BOA{i}]"),
            Special::Eoa(i) => write!(f, "[EOA{i}]"),
            Special::Pad => write!(f, "[PAD]"),
        }
    }
}

/// Id layout: `[text | visual codes | audio codes | [TXT], per-frame
/// BOV/EOV/BOA/EOA | pad]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    pub text: usize,
    pub visual: usize,
    pub audio: usize,
    pub frames: usize,
}

impl Vocabulary {
    pub fn new(text: usize, visual: usize, audio: usize, frames: usize) -> Result<Self> {
        if text == 0 || visual == 0 || audio == 0 || frames == 0 {
            return Err(Error::Config(format!(
                "vocabulary needs non-empty ranges and frames (text {text}, visual {visual}, audio {audio}, frames {frames})"
            )));
        }
        Ok(Self { text, visual, audio, frames })
    }

    pub fn text_range(&self) -> Range<usize> {
        0..self.text
    }

    pub fn visual_range(&self) -> Range<usize> {
        self.text..self.text + self.visual
    }

    pub fn audio_range(&self) -> Range<usize> {
        let s = self.text + self.visual;
        s..s + self.audio
    }

    fn special_base(&self) -> usize {
        self.text + self.visual + self.audio
    }

    pub fn pad(&self) -> usize {
        self.special_base() + 1 + 4 * self.frames
    }

    pub fn size(&self) -> usize {
        self.pad() + 1
    }

    pub fn special_id(&self, s: Special) -> Result<usize> {
        let base = self.special_base();
        let frame = |i: usize, k: usize| {
            if (1..=self.frames).contains(&i) {
                Ok(base + 1 + 4 * (i - 1) + k)
            } else {
                Err(Error::invalid("special_id", format!("frame {i} outside 1..={}", self.frames)))
            }
        };
        match s {
            Special::Txt => Ok(base),
            Special::Bov(i) => frame(i, 0),
            Special::Eov(i) => frame(i, 1),
            Special::Boa(i) => frame(i, 2),
            Special::Eoa(i) => frame(i, 3),
            Special::Pad => Ok(self.pad()),
        }
    }

    pub fn special_of(&self, id: usize) -> Option<Special> {
        let base = self.special_base();
        if id == base {
            return Some(Special::Txt);
        }
        if id == self.pad() {
            return Some(Special::Pad);
        }
        if id > base && id < self.pad() {
            let k = id - base - 1;
            let i = k / 4 + 1;
            return Some(match k % 4 {
                0 => Special::Bov(i),
                1 => Special::Eov(i),
                2 => Special::Boa(i),
                _ => Special::Eoa(i),
            });
        }
        None
    }

    pub fn kind(&self, id: usize) -> Option<TokenKind> {
        if self.text_range().contains(&id) {
            Some(TokenKind::Text)
        } else if self.visual_range().contains(&id) {
            Some(TokenKind::Visual)
        } else if self.audio_range().contains(&id) {
            Some(TokenKind::Audio)
        } else if id < self.size() {
            Some(TokenKind::Special)
        } else {
            None
        }
    }

    pub fn visual_id(&self, code: usize) -> usize {
        self.text + code
    }

    pub fn audio_id(&self, code: usize) -> usize {
        self.text + self.visual + code
    }

    /// Id range legal at a position of the given kind.
    pub fn range_of(&self, kind: TokenKind) -> Range<usize> {
        match kind {
            TokenKind::Text => self.text_range(),
            TokenKind::Visual => self.visual_range(),
            TokenKind::Audio => self.audio_range(),
            TokenKind::Special => self.special_base()..self.size(),
        }
    }
}

/// A row-major grid of codebook indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<usize>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, codes: Vec<usize>) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(Error::invalid("grid", format!("{} codes for a {rows}×{cols} grid", codes.len())));
        }
        Ok(Self { rows, cols, codes })
    }

    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("grid", "ragged rows"));
        }
        Ok(Self { rows: rows.len(), cols, codes: rows.concat() })
    }

    pub fn to_rows(&self) -> Vec<Vec<usize>> {
        self.codes.chunks(self.cols.max(1)).map(<[usize]>::to_vec).collect()
    }
}

/// Row-major flattening.
pub fn flatten_grid(grid: &Grid) -> Vec<usize> {
    grid.codes.clone()
}

pub fn unflatten_grid(tokens: &[usize], rows: usize, cols: usize) -> Result<Grid> {
    Grid::new(rows, cols, tokens.to_vec())
}

/// What a sequence position holds. Frames are 1-based; text and `[TXT]` are frame 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Special(Special),
    Text,
    Visual { frame: usize },
    Audio { frame: usize },
}

impl Slot {
    pub fn kind(self) -> TokenKind {
        match self {
            Slot::Special(_) => TokenKind::Special,
            Slot::Text => TokenKind::Text,
            Slot::Visual { .. } => TokenKind::Visual,
            Slot::Audio { .. } => TokenKind::Audio,
        }
    }

    pub fn frame(self) -> usize {
        match self {
            Slot::Visual { frame } | Slot::Audio { frame } => frame,
            Slot::Special(Special::Bov(i) | Special::Eov(i) | Special::Boa(i) | Special::Eoa(i)) => i,
            _ => 0,
        }
    }
}

/// The position-by-position grammar of one format for fixed text and grid sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub format: SeqFormat,
    pub frames: usize,
    pub text_len: usize,
    pub visual_len: usize,
    pub audio_len: usize,
    pub slots: Vec<Slot>,
}

impl Layout {
    pub fn new(format: SeqFormat, frames: usize, text_len: usize, visual_len: usize, audio_len: usize) -> Self {
        let mut slots = Vec::with_capacity(1 + text_len + frames * (visual_len + audio_len + 4));
        slots.push(Slot::Special(Special::Txt));
        slots.extend(core::iter::repeat_n(Slot::Text, text_len));
        let visual = |slots: &mut Vec<Slot>, i: usize| {
            slots.push(Slot::Special(Special::Bov(i)));
            slots.extend(core::iter::repeat_n(Slot::Visual { frame: i }, visual_len));
            slots.push(Slot::Special(Special::Eov(i)));
        };
        let audio = |slots: &mut Vec<Slot>, i: usize| {
            slots.push(Slot::Special(Special::Boa(i)));
            slots.extend(core::iter::repeat_n(Slot::Audio { frame: i }, audio_len));
            slots.push(Slot::Special(Special::Eoa(i)));
        };
        match format {
            SeqFormat::Tva => {
                (1..=frames).for_each(|i| visual(&mut slots, i));
                (1..=frames).for_each(|i| audio(&mut slots, i));
            }
            SeqFormat::Tav => {
                (1..=frames).for_each(|i| audio(&mut slots, i));
                (1..=frames).for_each(|i| visual(&mut slots, i));
            }
            SeqFormat::Masf => (1..=frames).for_each(|i| {
                visual(&mut slots, i);
                audio(&mut slots, i);
            }),
        }
        Self { format, frames, text_len, visual_len, audio_len, slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultimodalSequence {
    pub format: SeqFormat,
    pub ids: Vec<usize>,
    pub kinds: Vec<TokenKind>,
    /// 1-based frame per position, 0 for `[TXT]` and text.
    pub frames: Vec<usize>,
}

impl MultimodalSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Tags an id list from its own tokens; does not check structure.
    pub fn tag(vocab: &Vocabulary, format: SeqFormat, ids: Vec<usize>) -> Result<Self> {
        let mut kinds = Vec::with_capacity(ids.len());
        let mut frames = Vec::with_capacity(ids.len());
        let mut current = 0;
        for (p, id) in ids.iter().enumerate() {
            let k = vocab.kind(*id).ok_or_else(|| Error::Parse { position: p, msg: format!("id {id} outside vocabulary") })?;
            if let Some(s) = vocab.special_of(*id) {
                current = Slot::Special(s).frame();
            }
            kinds.push(k);
            frames.push(if k == TokenKind::Text { 0 } else { current });
        }
        Ok(Self { format, ids, kinds, frames })
    }
}

/// Text ids plus per-frame visual and audio grids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceContent {
    pub text: Vec<usize>,
    pub visual: Vec<Grid>,
    pub audio: Vec<Grid>,
}

fn check_grids(vocab: &Vocabulary, grids: &[Grid], n_codes: usize, what: &str) -> Result<(usize, usize)> {
    if grids.len() != vocab.frames {
        return Err(Error::invalid("build_sequence", format!("{} {what} grids for {} frames", grids.len(), vocab.frames)));
    }
    let (r, c) = (grids[0].rows, grids[0].cols);
    for g in grids {
        if (g.rows, g.cols) != (r, c) || g.codes.len() != r * c {
            return Err(Error::invalid("build_sequence", format!("{what} grids differ in shape")));
        }
        if let Some(bad) = g.codes.iter().find(|x| **x >= n_codes) {
            return Err(Error::invalid("build_sequence", format!("{what} code {bad} outside codebook of {n_codes}")));
        }
    }
    Ok((r, c))
}

pub fn build_sequence(vocab: &Vocabulary, format: SeqFormat, content: &SequenceContent, max_len: usize) -> Result<MultimodalSequence> {
    let (vr, vc) = check_grids(vocab, &content.visual, vocab.visual, "visual")?;
    let (ar, ac) = check_grids(vocab, &content.audio, vocab.audio, "audio")?;
    if let Some(bad) = content.text.iter().find(|x| **x >= vocab.text) {
        return Err(Error::invalid("build_sequence", format!("text id {bad} outside text vocabulary of {}", vocab.text)));
    }
    let layout = Layout::new(format, vocab.frames, content.text.len(), vr * vc, ar * ac);
    if layout.len() > max_len {
        return Err(Error::Overflow { len: layout.len(), max_len });
    }
    let mut ids = Vec::with_capacity(layout.len());
    let (mut ti, mut cursor) = (0, BTreeMap::<(TokenKind, usize), usize>::new());
    for slot in &layout.slots {
        let id = match *slot {
            Slot::Special(s) => vocab.special_id(s)?,
            Slot::Text => {
                ti += 1;
                content.text[ti - 1]
            }
            Slot::Visual { frame } => {
                let k = cursor.entry((TokenKind::Visual, frame)).or_insert(0);
                *k += 1;
                vocab.visual_id(content.visual[frame - 1].codes[*k - 1])
            }
            Slot::Audio { frame } => {
                let k = cursor.entry((TokenKind::Audio, frame)).or_insert(0);
                *k += 1;
                vocab.audio_id(content.audio[frame - 1].codes[*k - 1])
            }
        };
        ids.push(id);
    }
    Ok(MultimodalSequence {
        format,
        ids,
        kinds: layout.slots.iter().map(|s| s.kind()).collect(),
        frames: layout.slots.iter().map(|s| s.frame()).collect(),
    })
}

/// Inverse of [`build_sequence`]. Text length is read off the sequence; grid
/// shapes are given. Reports the first position that breaks the grammar.
pub fn parse_sequence(
    vocab: &Vocabulary,
    format: SeqFormat,
    ids: &[usize],
    visual_shape: (usize, usize),
    audio_shape: (usize, usize),
) -> Result<SequenceContent> {
    let err = |position: usize, msg: alloc::string::String| Error::Parse { position, msg };
    let expect_special = |p: usize, s: Special| -> Result<()> {
        let want = vocab.special_id(s)?;
        match ids.get(p) {
            None => Err(err(p, format!("sequence ends where {s} is expected"))),
            Some(id) if *id == want => Ok(()),
            Some(id) => match vocab.special_of(*id) {
                Some(got) => Err(err(p, format!("expected {s}, found {got}"))),
                None => Err(err(p, format!("expected {s}, found id {id}"))),
            },
        }
    };
    expect_special(0, Special::Txt)?;
    let mut p = 1;
    let mut text = Vec::new();
    while let Some(id) = ids.get(p).filter(|id| vocab.text_range().contains(id)) {
        text.push(*id);
        p += 1;
    }
    let layout = Layout::new(format, vocab.frames, text.len(), visual_shape.0 * visual_shape.1, audio_shape.0 * audio_shape.1);
    let mut visual: Vec<Vec<usize>> = alloc::vec![Vec::new(); vocab.frames];
    let mut audio: Vec<Vec<usize>> = alloc::vec![Vec::new(); vocab.frames];
    for (q, slot) in layout.slots.iter().enumerate().skip(p) {
        match *slot {
            Slot::Special(s) => expect_special(q, s)?,
            Slot::Text => unreachable!("text slots precede p"),
            Slot::Visual { frame } | Slot::Audio { frame } => {
                let (range, out, what) = if slot.kind() == TokenKind::Visual {
                    (vocab.visual_range(), &mut visual[frame - 1], "visual")
                } else {
                    (vocab.audio_range(), &mut audio[frame - 1], "audio")
                };
                match ids.get(q) {
                    None => return Err(err(q, format!("sequence ends inside {what} frame {frame}"))),
                    Some(id) if range.contains(id) => out.push(id - range.start),
                    Some(id) => return Err(err(q, format!("expected a {what} token of frame {frame}, found id {id}"))),
                }
            }
        }
    }
    if ids.len() > layout.len() {
        return Err(err(layout.len(), format!("{} trailing tokens", ids.len() - layout.len())));
    }
    let grids = |v: Vec<Vec<usize>>, (r, c): (usize, usize)| v.into_iter().map(|codes| Grid::new(r, c, codes)).collect::<Result<Vec<_>>>();
    Ok(SequenceContent { text, visual: grids(visual, visual_shape)?, audio: grids(audio, audio_shape)? })
}

/// Causal visibility: position `to` can attend `from` iff `from < to`.
pub fn reachability(from: usize, to: usize) -> bool {
    from < to
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reach {
    /// Every token of the target group sees every token of the source group.
    Full,
    Partial,
    None,
}

/// A contiguous block of same-modality tokens: text, or one frame of one modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Group {
    pub kind: TokenKind,
    pub frame: usize,
}

/// For each ordered pair of token groups, how much of `from` is visible to `to`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossModalSummary {
    pub format: SeqFormat,
    pub entries: BTreeMap<(Group, Group), Reach>,
}

impl CrossModalSummary {
    /// Reach of `(to, from)`.
    pub fn get(&self, to: Group, from: Group) -> Reach {
        self.entries.get(&(to, from)).copied().unwrap_or(Reach::None)
    }
}

pub fn cross_modal_summary(layout: &Layout) -> CrossModalSummary {
    let mut spans: BTreeMap<Group, (usize, usize)> = BTreeMap::new();
    for (p, slot) in layout.slots.iter().enumerate() {
        if slot.kind() == TokenKind::Special {
            continue;
        }
        let g = Group { kind: slot.kind(), frame: slot.frame() };
        let e = spans.entry(g).or_insert((p, p));
        e.1 = p;
    }
    let mut entries = BTreeMap::new();
    for (to, (t0, t1)) in &spans {
        for (from, (f0, f1)) in &spans {
            let reach = if f1 < t0 {
                Reach::Full
            } else if f0 >= t1 {
                Reach::None
            } else {
                Reach::Partial
            };
            entries.insert((*to, *from), reach);
        }
    }
    CrossModalSummary { format: layout.format, entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn vocab1() -> Vocabulary {
        Vocabulary::new(4, 8, 8, 1).unwrap()
    }

    #[test]
    fn flatten_is_row_major() {
        let g = Grid::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(flatten_grid(&g), vec![1, 2, 3, 4]);
        assert_eq!(unflatten_grid(&[1, 2, 3, 4], 2, 2).unwrap(), g);
        assert!(unflatten_grid(&[1, 2, 3], 2, 2).is_err());
    }

    #[test]
    fn masf_single_frame_expansion() {
        let v = vocab1();
        let content = SequenceContent {
            text: vec![1],
            visual: vec![Grid::new(2, 2, vec![0, 1, 2, 3]).unwrap()],
            audio: vec![Grid::new(1, 2, vec![5, 6]).unwrap()],
        };
        let s = build_sequence(&v, SeqFormat::Masf, &content, 64).unwrap();
        let sp = |x| v.special_id(x).unwrap();
        let expect = vec![
            sp(Special::Txt),
            1,
            sp(Special::Bov(1)),
            4,
            5,
            6,
            7,
            sp(Special::Eov(1)),
            sp(Special::Boa(1)),
            17,
            18,
            sp(Special::Eoa(1)),
        ];
        assert_eq!(s.ids, expect);
        assert_eq!(s.len(), 12);
        assert_eq!(parse_sequence(&v, SeqFormat::Masf, &s.ids, (2, 2), (1, 2)).unwrap(), content);
    }

    #[test]
    fn overflow_names_length() {
        let v = vocab1();
        let content = SequenceContent {
            text: vec![0; 5],
            visual: vec![Grid::new(1, 1, vec![0]).unwrap()],
            audio: vec![Grid::new(1, 1, vec![0]).unwrap()],
        };
        assert!(matches!(build_sequence(&v, SeqFormat::Tva, &content, 8), Err(Error::Overflow { len: 12, max_len: 8 })));
    }

    #[test]
    fn paper_scale_text_budget() {
        let len = |text| Layout::new(SeqFormat::Masf, 10, text, 64, 25).len();
        assert_eq!(len(94), 1025);
        assert!(len(95) > 1025);
    }

    #[test]
    fn truncation_and_order_errors() {
        let v = Vocabulary::new(4, 8, 8, 2).unwrap();
        let content = SequenceContent {
            text: vec![2],
            visual: vec![Grid::new(1, 1, vec![3]).unwrap(); 2],
            audio: vec![Grid::new(1, 1, vec![4]).unwrap(); 2],
        };
        let s = build_sequence(&v, SeqFormat::Masf, &content, 64).unwrap();
        let cut = &s.ids[..7];
        assert!(matches!(parse_sequence(&v, SeqFormat::Masf, cut, (1, 1), (1, 1)), Err(Error::Parse { position: 7, .. })));
        let mut swapped = s.ids.clone();
        swapped.swap(2, 4);
        assert!(matches!(parse_sequence(&v, SeqFormat::Masf, &swapped, (1, 1), (1, 1)), Err(Error::Parse { position: 2, .. })));
    }

    #[test]
    fn tva_visual_never_sees_audio() {
        let s = cross_modal_summary(&Layout::new(SeqFormat::Tva, 3, 2, 4, 2));
        for i in 1..=3 {
            for j in 1..=3 {
                let a = Group { kind: TokenKind::Audio, frame: i };
                let v = Group { kind: TokenKind::Visual, frame: j };
                assert_eq!(s.get(a, v), Reach::Full);
                assert_eq!(s.get(v, a), Reach::None);
            }
        }
    }

    #[test]
    fn specials_round_trip() {
        let v = Vocabulary::new(3, 5, 7, 4).unwrap();
        for id in v.range_of(TokenKind::Special) {
            let s = v.special_of(id).unwrap();
            assert_eq!(v.special_id(s).unwrap(), id);
        }
        assert_eq!(v.size(), 3 + 5 + 7 + 17 + 1);
    }
}
