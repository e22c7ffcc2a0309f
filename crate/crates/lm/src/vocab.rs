//! One shared id space with disjoint ranges per stream.

use serde::{Deserialize, Serialize};
use sts_core::tokenize::PitchVocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    SemanticStart,
    SemanticEnd,
    PitchStart,
    PitchEnd,
    RefStart,
    RefEnd,
    AcousticStart,
    AcousticEnd,
    Pad,
}

impl Special {
    pub const ALL: [Special; 9] = [
        Special::SemanticStart,
        Special::SemanticEnd,
        Special::PitchStart,
        Special::PitchEnd,
        Special::RefStart,
        Special::RefEnd,
        Special::AcousticStart,
        Special::AcousticEnd,
        Special::Pad,
    ];
    pub const COUNT: usize = 9;
}

/// Id layout: semantic units, pitch tokens, acoustic codes, specials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub k1: usize,
    pub k2: usize,
    pub f_min: u32,
    pub f_max: u32,
}

impl Vocab {
    pub fn pitch_vocab(&self) -> PitchVocab {
        PitchVocab { f_min: self.f_min, f_max: self.f_max }
    }

    pub fn pitch_offset(&self) -> usize {
        self.k1
    }

    pub fn acoustic_offset(&self) -> usize {
        self.k1 + self.pitch_vocab().size()
    }

    pub fn special_offset(&self) -> usize {
        self.acoustic_offset() + self.k2
    }

    pub fn size(&self) -> usize {
        self.special_offset() + Special::COUNT
    }

    /// Width of the output head: acoustic codes plus specials.
    pub fn head_size(&self) -> usize {
        self.k2 + Special::COUNT
    }

    pub fn semantic(&self, unit: u32) -> Option<u32> {
        ((unit as usize) < self.k1).then_some(unit)
    }

    pub fn pitch(&self, token: u32) -> Option<u32> {
        let pv = self.pitch_vocab();
        pv.contains(token).then(|| (self.pitch_offset() + pv.index(token)) as u32)
    }

    pub fn acoustic(&self, code: u32) -> Option<u32> {
        ((code as usize) < self.k2).then(|| (self.acoustic_offset() + code as usize) as u32)
    }

    pub fn special(&self, s: Special) -> u32 {
        (self.special_offset() + s as usize) as u32
    }

    /// Head index of a global id, for ids in the acoustic or special range.
    pub fn head_index(&self, id: u32) -> Option<usize> {
        let id = id as usize;
        (id >= self.acoustic_offset() && id < self.size()).then(|| id - self.acoustic_offset())
    }

    pub fn head_special(&self, s: Special) -> usize {
        self.k2 + s as usize
    }

    pub fn from_head(&self, index: usize) -> u32 {
        (self.acoustic_offset() + index) as u32
    }

    pub fn special_of(&self, id: u32) -> Option<Special> {
        let id = id as usize;
        (id >= self.special_offset() && id < self.size()).then(|| Special::ALL[id - self.special_offset()])
    }
}
