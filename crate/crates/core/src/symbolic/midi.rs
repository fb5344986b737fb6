use std::collections::HashMap;

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};

use super::{
    InstrumentMap, NoteEvent, Pianoroll, SymbolicError, HIGHEST_PITCH, LOWEST_PITCH, PITCH_BINS,
};

const DRUM_CHANNEL: u8 = 9;
const DEFAULT_TEMPO_US: u32 = 500_000;
/// 1000 ticks per quarter at 120 bpm: one tick is half a millisecond.
const EXPORT_TICKS_PER_BEAT: u16 = 1000;

/// Piecewise-constant tempo map in absolute ticks.
struct TempoMap {
    ticks_per_beat: f64,
    /// `(tick, seconds at tick, microseconds per beat)`, sorted by tick.
    segments: Vec<(u64, f64, u32)>,
}

impl TempoMap {
    fn new(ticks_per_beat: u16, mut changes: Vec<(u64, u32)>) -> Self {
        changes.sort_by_key(|c| c.0);
        let tpb = ticks_per_beat as f64;
        let mut segments = vec![(0u64, 0.0f64, DEFAULT_TEMPO_US)];
        for (tick, tempo) in changes {
            let (last_tick, last_s, last_tempo) = *segments.last().unwrap();
            let s = last_s + (tick - last_tick) as f64 * last_tempo as f64 / 1e6 / tpb;
            if tick == last_tick {
                segments.pop();
            }
            segments.push((tick, s, tempo));
        }
        Self {
            ticks_per_beat: tpb,
            segments,
        }
    }

    fn seconds(&self, tick: u64) -> f64 {
        let i = self.segments.partition_point(|s| s.0 <= tick) - 1;
        let (t0, s0, tempo) = self.segments[i];
        s0 + (tick - t0) as f64 * tempo as f64 / 1e6 / self.ticks_per_beat
    }
}

enum Clock {
    Metrical(TempoMap),
    Timecode { ticks_per_second: f64 },
}

impl Clock {
    fn seconds(&self, tick: u64) -> f64 {
        match self {
            Clock::Metrical(map) => map.seconds(tick),
            Clock::Timecode { ticks_per_second } => tick as f64 / ticks_per_second,
        }
    }
}

struct OpenNote {
    tick: u64,
    velocity: u8,
    program: u8,
}

/// Decode a format 0/1 Standard MIDI File into note events in absolute seconds.
pub fn parse_midi(bytes: &[u8], map: &InstrumentMap) -> Result<Vec<NoteEvent>, SymbolicError> {
    let smf = Smf::parse(bytes).map_err(|e| SymbolicError::MalformedMidi(e.to_string()))?;
    if smf.header.format == Format::Sequential {
        return Err(SymbolicError::MalformedMidi(
            "format 2 files are not supported".into(),
        ));
    }
    let clock = match smf.header.timing {
        Timing::Metrical(tpb) => {
            if tpb.as_int() == 0 {
                return Err(SymbolicError::MalformedMidi("zero ticks per beat".into()));
            }
            let mut changes = Vec::new();
            for track in &smf.tracks {
                let mut tick = 0u64;
                for ev in track {
                    tick += ev.delta.as_int() as u64;
                    if let TrackEventKind::Meta(MetaMessage::Tempo(t)) = ev.kind {
                        changes.push((tick, t.as_int()));
                    }
                }
            }
            Clock::Metrical(TempoMap::new(tpb.as_int(), changes))
        }
        Timing::Timecode(fps, sub) => Clock::Timecode {
            ticks_per_second: fps.as_f32() as f64 * sub as f64,
        },
    };

    let mut events = Vec::new();
    for track in &smf.tracks {
        let mut tick = 0u64;
        let mut programs = [0u8; 16];
        let mut open: HashMap<(u8, u8), OpenNote> = HashMap::new();
        let close =
            |channel: u8, key: u8, note: OpenNote, end: u64, events: &mut Vec<NoteEvent>| {
                if end <= note.tick || !(LOWEST_PITCH..=HIGHEST_PITCH).contains(&key) {
                    return;
                }
                if let Some(instrument) = map.lookup(note.program, channel == DRUM_CHANNEL) {
                    events.push(NoteEvent {
                        pitch: key,
                        onset: clock.seconds(note.tick),
                        offset: clock.seconds(end),
                        instrument,
                        velocity: note.velocity.max(1),
                    });
                }
            };
        for ev in track {
            tick += ev.delta.as_int() as u64;
            let TrackEventKind::Midi { channel, message } = ev.kind else {
                continue;
            };
            let ch = channel.as_int();
            match message {
                MidiMessage::ProgramChange { program } => programs[ch as usize] = program.as_int(),
                MidiMessage::NoteOn { key, vel } if vel.as_int() > 0 => {
                    let key = key.as_int();
                    if let Some(prev) = open.remove(&(ch, key)) {
                        close(ch, key, prev, tick, &mut events);
                    }
                    open.insert(
                        (ch, key),
                        OpenNote {
                            tick,
                            velocity: vel.as_int(),
                            program: programs[ch as usize],
                        },
                    );
                }
                MidiMessage::NoteOn { key, .. } | MidiMessage::NoteOff { key, .. } => {
                    if let Some(prev) = open.remove(&(ch, key.as_int())) {
                        close(ch, key.as_int(), prev, tick, &mut events);
                    }
                }
                _ => {}
            }
        }
        // Notes still sounding at the end of the track end there.
        let mut dangling: Vec<_> = open.into_iter().collect();
        dangling.sort_by_key(|((ch, key), _)| (*ch, *key));
        for ((ch, key), note) in dangling {
            close(ch, key, note, tick, &mut events);
        }
    }
    if events.is_empty() {
        return Err(SymbolicError::EmptyScore);
    }
    events.sort_by(|a, b| {
        a.onset
            .total_cmp(&b.onset)
            .then(a.instrument.cmp(&b.instrument))
            .then(a.pitch.cmp(&b.pitch))
    });
    Ok(events)
}

fn export_channel(index: usize) -> u8 {
    // 15 melodic channels, skipping the drum channel
    let c = (index % 15) as u8;
    if c >= DRUM_CHANNEL {
        c + 1
    } else {
        c
    }
}

/// Note segments `(pitch index, first frame, end frame)` of one instrument slice.
/// Runs of consecutive active frames merge into one note.
pub fn note_segments(roll: &Pianoroll, instrument: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for f in 0..PITCH_BINS {
        let mut start = None;
        for t in 0..=roll.frames() {
            let on = t < roll.frames() && roll.get(f, t, instrument);
            match (on, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    out.push((f, s, t));
                    start = None;
                }
                _ => {}
            }
        }
    }
    out
}

/// Export a roll as a format 1 Standard MIDI File, one track per sounding instrument.
pub fn pianoroll_to_midi(roll: &Pianoroll, map: &InstrumentMap) -> Vec<u8> {
    let ticks = |frame: usize| -> u64 {
        let seconds = frame as f64 / roll.frame_rate();
        (seconds * 2.0 * EXPORT_TICKS_PER_BEAT as f64).round() as u64
    };
    let mut tracks: Vec<Vec<TrackEvent<'static>>> = vec![vec![
        TrackEvent {
            delta: u28::new(0),
            kind: TrackEventKind::Meta(MetaMessage::Tempo(u24::new(DEFAULT_TEMPO_US))),
        },
        TrackEvent {
            delta: u28::new(0),
            kind: TrackEventKind::Meta(MetaMessage::EndOfTrack),
        },
    ]];
    for m in 0..roll.num_instruments() {
        let segments = note_segments(roll, m);
        if segments.is_empty() {
            continue;
        }
        let (channel, program) = match map.representative_program(m) {
            Some(p) => (export_channel(m), p),
            None => (DRUM_CHANNEL, 0),
        };
        // (tick, is_on, key); offs sort before ons at equal ticks
        let mut timeline: Vec<(u64, bool, u8)> = Vec::with_capacity(2 * segments.len());
        for (f, s, e) in segments {
            let key = LOWEST_PITCH + f as u8;
            timeline.push((ticks(s), true, key));
            timeline.push((ticks(e), false, key));
        }
        timeline.sort();
        let ch = u4::new(channel);
        let mut track = vec![TrackEvent {
            delta: u28::new(0),
            kind: TrackEventKind::Midi {
                channel: ch,
                message: MidiMessage::ProgramChange {
                    program: u7::new(program),
                },
            },
        }];
        let mut last = 0u64;
        for (tick, on, key) in timeline {
            let message = if on {
                MidiMessage::NoteOn {
                    key: u7::new(key),
                    vel: u7::new(100),
                }
            } else {
                MidiMessage::NoteOff {
                    key: u7::new(key),
                    vel: u7::new(0),
                }
            };
            track.push(TrackEvent {
                delta: u28::new((tick - last) as u32),
                kind: TrackEventKind::Midi {
                    channel: ch,
                    message,
                },
            });
            last = tick;
        }
        track.push(TrackEvent {
            delta: u28::new(0),
            kind: TrackEventKind::Meta(MetaMessage::EndOfTrack),
        });
        tracks.push(track);
    }
    let smf = Smf {
        header: Header::new(
            Format::Parallel,
            Timing::Metrical(u15::new(EXPORT_TICKS_PER_BEAT)),
        ),
        tracks,
    };
    let mut out = Vec::new();
    smf.write_std(&mut out)
        .expect("writing to a Vec cannot fail");
    out
}
