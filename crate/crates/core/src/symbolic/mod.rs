//! Symbolic scores: note events, instrument maps and the three roll views.

mod container;
mod midi;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::CqtMatrix;

pub use container::{read_cqt, read_roll, write_cqt, write_roll};
pub use midi::{note_segments, parse_midi, pianoroll_to_midi};

/// Number of piano keys / pitch rows in every roll.
pub const PITCH_BINS: usize = 88;
/// MIDI note number of the lowest piano key (A0).
pub const LOWEST_PITCH: u8 = 21;
pub const HIGHEST_PITCH: u8 = 108;
/// Frames per second of a 512-sample hop at 16 kHz.
pub const DEFAULT_FRAME_RATE: f64 = 31.25;
/// Ten seconds at the default frame rate.
pub const DEFAULT_CHUNK_FRAMES: usize = 312;

#[derive(Debug, Error)]
pub enum SymbolicError {
    #[error("malformed MIDI: {0}")]
    MalformedMidi(String),
    #[error("score has no retained note events")]
    EmptyScore,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid instrument map: {0}")]
    InvalidInstrumentMap(String),
    #[error("corrupt container: {0}")]
    CorruptContainer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    /// MIDI note number in `[21, 108]`.
    pub pitch: u8,
    pub onset: f64,
    pub offset: f64,
    pub instrument: usize,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn pitch_index(&self) -> usize {
        (self.pitch - LOWEST_PITCH) as usize
    }
}

/// Maps General MIDI programs (and the drum channel) onto modeled instrument indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentMap {
    names: Vec<String>,
    /// Per program; `None` means the program is discarded.
    programs: Vec<Option<usize>>,
    drums: Option<usize>,
}

impl InstrumentMap {
    pub fn new(
        names: Vec<String>,
        programs: Vec<Option<usize>>,
        drums: Option<usize>,
    ) -> Result<Self, SymbolicError> {
        let bad = |m: String| Err(SymbolicError::InvalidInstrumentMap(m));
        if names.is_empty() {
            return bad("no instruments".into());
        }
        if programs.len() != 128 {
            return bad(format!(
                "expected 128 program entries, got {}",
                programs.len()
            ));
        }
        let m = names.len();
        let mut covered = vec![false; m];
        for idx in programs.iter().chain(std::iter::once(&drums)).flatten() {
            if *idx >= m {
                return bad(format!("instrument index {idx} out of range for M={m}"));
            }
            covered[*idx] = true;
        }
        if let Some(missing) = covered.iter().position(|c| !c) {
            return bad(format!(
                "instrument {missing} ({}) has no program",
                names[missing]
            ));
        }
        Ok(Self {
            names,
            programs,
            drums,
        })
    }

    fn from_ranges(names: &[&str], ranges: &[(usize, std::ops::RangeInclusive<u8>)]) -> Self {
        let mut programs = vec![None; 128];
        for (idx, range) in ranges {
            for p in range.clone() {
                programs[p as usize] = Some(*idx);
            }
        }
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            programs,
            None,
        )
        .expect("built-in instrument map is valid")
    }

    /// Five instruments: piano, guitar, violin, cello, flute.
    pub fn toy() -> Self {
        Self::from_ranges(
            &["piano", "acoustic guitar", "violin", "cello", "flute"],
            &[
                (0, 0..=7),
                (1, 24..=31),
                (2, 40..=41),
                (3, 42..=43),
                (4, 72..=79),
            ],
        )
    }

    /// Seven instruments covering the strings/piano/acoustic/band composition styles.
    pub fn rearrangement() -> Self {
        Self::from_ranges(
            &[
                "piano",
                "acoustic guitar",
                "electric guitar",
                "bass",
                "violin",
                "cello",
                "flute",
            ],
            &[
                (0, 0..=7),
                (1, 24..=25),
                (2, 26..=31),
                (3, 32..=39),
                (4, 40..=41),
                (5, 42..=43),
                (6, 72..=79),
            ],
        )
    }

    /// One instrument per General MIDI program; drums discarded.
    pub fn general_midi() -> Self {
        let names = (0..128).map(|p| format!("program {p}")).collect();
        Self::new(names, (0..128).map(Some).collect(), None).expect("identity map is valid")
    }

    pub fn num_instruments(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn lookup(&self, program: u8, drum: bool) -> Option<usize> {
        if drum {
            self.drums
        } else {
            self.programs.get(program as usize).copied().flatten()
        }
    }

    /// Lowest program mapped to `index`, or `None` if only the drum channel maps there.
    pub fn representative_program(&self, index: usize) -> Option<u8> {
        self.programs
            .iter()
            .position(|p| *p == Some(index))
            .map(|p| p as u8)
    }
}

/// Binary `(pitch, time, instrument)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Pianoroll {
    data: Vec<u8>,
    frames: usize,
    frame_rate: f64,
    instrument_map: InstrumentMap,
}

impl Pianoroll {
    pub fn zeros(frames: usize, frame_rate: f64, instrument_map: InstrumentMap) -> Self {
        let m = instrument_map.num_instruments();
        Self {
            data: vec![0; PITCH_BINS * frames * m],
            frames,
            frame_rate,
            instrument_map,
        }
    }

    /// Build from `(F, T, M)` row-major cells; any nonzero cell becomes 1.
    pub fn from_cells(
        cells: Vec<u8>,
        frames: usize,
        frame_rate: f64,
        instrument_map: InstrumentMap,
    ) -> Result<Self, SymbolicError> {
        let expected = PITCH_BINS * frames * instrument_map.num_instruments();
        if cells.len() != expected {
            return Err(SymbolicError::LengthMismatch(format!(
                "{} cells for shape (88, {frames}, {})",
                cells.len(),
                instrument_map.num_instruments()
            )));
        }
        Ok(Self {
            data: cells.into_iter().map(|v| (v != 0) as u8).collect(),
            frames,
            frame_rate,
            instrument_map,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn num_instruments(&self) -> usize {
        self.instrument_map.num_instruments()
    }

    pub fn instrument_map(&self) -> &InstrumentMap {
        &self.instrument_map
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (PITCH_BINS, self.frames, self.num_instruments())
    }

    pub fn cells(&self) -> &[u8] {
        &self.data
    }

    fn index(&self, f: usize, t: usize, m: usize) -> usize {
        (f * self.frames + t) * self.num_instruments() + m
    }

    pub fn get(&self, f: usize, t: usize, m: usize) -> bool {
        self.data[self.index(f, t, m)] != 0
    }

    pub fn set(&mut self, f: usize, t: usize, m: usize, on: bool) {
        let i = self.index(f, t, m);
        self.data[i] = on as u8;
    }

    pub fn active_cells(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Pianoroll {
        let m = self.num_instruments();
        let mut out = Pianoroll::zeros(len, self.frame_rate, self.instrument_map.clone());
        for f in 0..PITCH_BINS {
            let src = self.index(f, start, 0);
            let dst = out.index(f, 0, 0);
            out.data[dst..dst + len * m].copy_from_slice(&self.data[src..src + len * m]);
        }
        out
    }
}

/// Binary `(instrument, time)` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentRoll {
    pub data: Vec<u8>,
    pub instruments: usize,
    pub frames: usize,
    pub frame_rate: f64,
}

impl InstrumentRoll {
    pub fn get(&self, m: usize, t: usize) -> bool {
        self.data[m * self.frames + t] != 0
    }
}

/// Binary `(pitch, time)` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PitchRoll {
    pub data: Vec<u8>,
    pub frames: usize,
    pub frame_rate: f64,
}

impl PitchRoll {
    pub fn get(&self, f: usize, t: usize) -> bool {
        self.data[f * self.frames + t] != 0
    }
}

fn frame_center(t: usize, frame_rate: f64) -> f64 {
    (t as f64 + 0.5) / frame_rate
}

/// Rasterize note events; a cell is on when its frame center lies in `[onset, offset)`.
pub fn events_to_pianoroll(
    events: &[NoteEvent],
    frame_rate: f64,
    duration_s: f64,
    instrument_map: &InstrumentMap,
) -> Pianoroll {
    assert!(frame_rate > 0.0 && duration_s > 0.0);
    let frames = (duration_s * frame_rate).floor() as usize;
    let mut roll = Pianoroll::zeros(frames, frame_rate, instrument_map.clone());
    for ev in events {
        if !(LOWEST_PITCH..=HIGHEST_PITCH).contains(&ev.pitch)
            || ev.instrument >= roll.num_instruments()
        {
            continue;
        }
        let f = ev.pitch_index();
        let start = ((ev.onset * frame_rate - 0.5).floor() - 1.0).max(0.0) as usize;
        for t in start..frames {
            let c = frame_center(t, frame_rate);
            if c >= ev.offset {
                break;
            }
            if c >= ev.onset {
                roll.set(f, t, ev.instrument, true);
            }
        }
    }
    roll
}

/// Any-over-pitch reduction: `(M, T)`.
pub fn project_instrument_roll(roll: &Pianoroll) -> InstrumentRoll {
    let (f_bins, frames, m) = roll.shape();
    let mut data = vec![0u8; m * frames];
    for f in 0..f_bins {
        for t in 0..frames {
            for i in 0..m {
                data[i * frames + t] |= roll.data[roll.index(f, t, i)];
            }
        }
    }
    InstrumentRoll {
        data,
        instruments: m,
        frames,
        frame_rate: roll.frame_rate,
    }
}

/// Any-over-instrument reduction: `(F, T)`.
pub fn project_pitch_roll(roll: &Pianoroll) -> PitchRoll {
    let (f_bins, frames, m) = roll.shape();
    let mut data = vec![0u8; f_bins * frames];
    for f in 0..f_bins {
        for t in 0..frames {
            let base = roll.index(f, t, 0);
            data[f * frames + t] = roll.data[base..base + m].iter().any(|&v| v != 0) as u8;
        }
    }
    PitchRoll {
        data,
        frames,
        frame_rate: roll.frame_rate,
    }
}

/// Split aligned features and roll into non-overlapping windows of `chunk_frames`;
/// a trailing remainder is dropped.
pub fn chunk_pair(
    cqt: &CqtMatrix,
    roll: &Pianoroll,
    chunk_frames: usize,
) -> Result<Vec<(CqtMatrix, Pianoroll)>, SymbolicError> {
    if cqt.frames() != roll.frames() {
        return Err(SymbolicError::LengthMismatch(format!(
            "CQT has {} frames, roll has {}",
            cqt.frames(),
            roll.frames()
        )));
    }
    if (cqt.frame_rate() - roll.frame_rate()).abs() > 1e-9 {
        return Err(SymbolicError::LengthMismatch(format!(
            "frame rates differ: {} vs {}",
            cqt.frame_rate(),
            roll.frame_rate()
        )));
    }
    assert!(chunk_frames > 0);
    Ok((0..roll.frames() / chunk_frames)
        .map(|i| {
            let start = i * chunk_frames;
            (
                cqt.slice_frames(start, chunk_frames),
                roll.slice_frames(start, chunk_frames),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn note(pitch: u8, onset: f64, offset: f64, instrument: usize) -> NoteEvent {
        NoteEvent {
            pitch,
            onset,
            offset,
            instrument,
            velocity: 100,
        }
    }

    #[test]
    fn half_second_note_covers_sixteen_frames() {
        let map = InstrumentMap::toy();
        let roll = events_to_pianoroll(&[note(60, 0.0, 0.5, 0)], 31.25, 1.0, &map);
        // brute-force center test
        for t in 0..roll.frames() {
            let center = (t as f64 + 0.5) / 31.25;
            assert_eq!(roll.get(39, t, 0), center < 0.5, "frame {t}");
        }
        assert!(roll.get(39, 15, 0));
        assert!(!roll.get(39, 16, 0));
        assert_eq!(roll.active_cells(), 16);
    }

    #[test]
    fn empty_events_give_zero_roll_of_expected_shape() {
        let roll = events_to_pianoroll(&[], 31.25, 10.0, &InstrumentMap::toy());
        assert_eq!(roll.shape(), (88, 312, 5));
        assert_eq!(roll.active_cells(), 0);
    }

    #[test]
    fn simultaneous_notes_on_two_instruments_fill_both_slices() {
        let roll = events_to_pianoroll(
            &[note(50, 0.1, 0.3, 1), note(50, 0.1, 0.3, 3)],
            31.25,
            1.0,
            &InstrumentMap::toy(),
        );
        for t in 0..roll.frames() {
            assert_eq!(roll.get(29, t, 1), roll.get(29, t, 3));
        }
        assert!(roll.get(29, 5, 1));
    }

    #[test]
    fn single_cell_projections() {
        let mut roll = Pianoroll::zeros(8, 31.25, InstrumentMap::toy());
        roll.set(10, 3, 1, true);
        let inst = project_instrument_roll(&roll);
        let pitch = project_pitch_roll(&roll);
        assert_eq!(inst.data.iter().map(|&v| v as usize).sum::<usize>(), 1);
        assert!(inst.get(1, 3));
        assert_eq!(pitch.data.iter().map(|&v| v as usize).sum::<usize>(), 1);
        assert!(pitch.get(10, 3));
    }

    #[test]
    fn all_ones_roll_projects_to_all_ones() {
        let map = InstrumentMap::toy();
        let roll = Pianoroll::from_cells(vec![1; 88 * 4 * 5], 4, 31.25, map).unwrap();
        assert!(project_instrument_roll(&roll).data.iter().all(|&v| v == 1));
        assert!(project_pitch_roll(&roll).data.iter().all(|&v| v == 1));
    }

    #[test]
    fn duplicated_pitch_across_instruments_projects_once() {
        let mut roll = Pianoroll::zeros(2, 31.25, InstrumentMap::toy());
        for m in 0..5 {
            roll.set(40, 0, m, true);
        }
        let p = project_pitch_roll(&roll);
        assert!(p.get(40, 0));
        assert_eq!(p.data.iter().filter(|&&v| v == 1).count(), 1);
    }

    fn chunk_inputs(frames: usize) -> (CqtMatrix, Pianoroll) {
        let cqt = CqtMatrix::from_vec(
            (0..88 * frames).map(|v| v as f32).collect(),
            88,
            frames,
            31.25,
        );
        let roll = Pianoroll::zeros(frames, 31.25, InstrumentMap::toy());
        (cqt, roll)
    }

    #[test]
    fn chunking_drops_the_trailing_remainder() {
        let (cqt, roll) = chunk_inputs(700);
        let chunks = chunk_pair(&cqt, &roll, 312).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].0.get(0, 0), cqt.get(0, 312));
        assert_eq!(chunks[1].0.get(87, 311), cqt.get(87, 623));
        let (cqt, roll) = chunk_inputs(311);
        assert!(chunk_pair(&cqt, &roll, 312).unwrap().is_empty());
        let (cqt, roll) = chunk_inputs(624);
        assert_eq!(chunk_pair(&cqt, &roll, 312).unwrap().len(), 2);
    }

    #[test]
    fn chunking_rejects_misaligned_inputs() {
        let (cqt, _) = chunk_inputs(400);
        let roll = Pianoroll::zeros(401, 31.25, InstrumentMap::toy());
        assert!(matches!(
            chunk_pair(&cqt, &roll, 312),
            Err(SymbolicError::LengthMismatch(_))
        ));
    }

    #[test]
    fn instrument_map_rejects_uncovered_index() {
        let mut programs = vec![None; 128];
        programs[0] = Some(0);
        let err = InstrumentMap::new(vec!["a".into(), "b".into()], programs, None);
        assert!(matches!(err, Err(SymbolicError::InvalidInstrumentMap(_))));
        assert_eq!(InstrumentMap::toy().lookup(9, true), None);
        assert_eq!(InstrumentMap::toy().lookup(41, false), Some(2));
    }

    fn random_roll(cells: Vec<bool>, frames: usize) -> Pianoroll {
        let map = InstrumentMap::toy();
        Pianoroll::from_cells(
            cells.into_iter().map(u8::from).collect(),
            frames,
            31.25,
            map,
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn projections_match_brute_force(cells in proptest::collection::vec(proptest::bool::weighted(0.05), 88 * 8 * 5)) {
            let roll = random_roll(cells, 8);
            let inst = project_instrument_roll(&roll);
            let pitch = project_pitch_roll(&roll);
            for t in 0..8 {
                for m in 0..5 {
                    let want = (0..88).any(|f| roll.get(f, t, m));
                    prop_assert_eq!(inst.get(m, t), want);
                }
                for f in 0..88 {
                    let want = (0..5).any(|m| roll.get(f, t, m));
                    prop_assert_eq!(pitch.get(f, t), want);
                }
            }
        }

        #[test]
        fn chunks_tile_the_prefix_exactly_once(frames in 1usize..1500, chunk in 1usize..400) {
            let (cqt, roll) = chunk_inputs(frames);
            let chunks = chunk_pair(&cqt, &roll, chunk).unwrap();
            prop_assert_eq!(chunks.len(), frames / chunk);
            for (i, (c, r)) in chunks.iter().enumerate() {
                prop_assert_eq!(c.frames(), chunk);
                prop_assert_eq!(r.frames(), chunk);
                prop_assert_eq!(c.get(0, 0), cqt.get(0, i * chunk));
            }
        }
    }
}
