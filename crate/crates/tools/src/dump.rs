//! Binary dump format for every filter type.
//!
//! All integers are little endian. A dump starts with an 8-byte magic and
//! a kind byte, followed by the kind's body:
//!
//! ```text
//! table      := q:u32 r:u32 seed:u64 nonzero:u8 len:u64 nwords:u64 word:u64*
//! sequential := variant:u8 table            (0 = three-bit, 1 = two-bit)
//! lp         := table
//! concurrent := table grow_at:f64 growing:u8 max_q:u32
//! expandable := capacity:u64 fpr_bound:f64 grow_at:f64 cascading:u8 seed:u64
//!               levels:u32 concurrent*
//! ```
//!
//! A concurrent filter stores its current table; the fingerprint length is
//! `q + r` of that table.

use std::io::{self, Read, Write};

use qf_core::{
    ConcurrentConfig, ConcurrentQf, ExpandableConfig, ExpandableQf, FilterParams, LinearProbingQf,
    QuotientFilter, Variant,
};

pub const MAGIC: [u8; 8] = *b"QFDUMP\x00\x01";

const KIND_SEQUENTIAL: u8 = 1;
const KIND_LP: u8 = 2;
const KIND_CONCURRENT: u8 = 3;
const KIND_EXPANDABLE: u8 = 4;

/// Refuse absurd word counts before allocating.
const MAX_WORDS: u64 = 1 << 36;

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a filter dump")]
    BadMagic,
    #[error("unknown filter kind {0}")]
    UnknownKind(u8),
    #[error("malformed dump: {0}")]
    Malformed(&'static str),
    #[error("filter rejected the dump: {0}")]
    Filter(#[from] qf_core::Error),
    #[error("cannot dump a filter while it is growing")]
    Migrating,
}

#[allow(clippy::large_enum_variant)]
pub enum Filter {
    Sequential(QuotientFilter),
    LinearProbing(LinearProbingQf),
    Concurrent(ConcurrentQf),
    Expandable(ExpandableQf),
}

impl std::fmt::Debug for Filter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Filter::Sequential(_) => "Sequential",
            Filter::LinearProbing(_) => "LinearProbing",
            Filter::Concurrent(_) => "Concurrent",
            Filter::Expandable(_) => "Expandable",
        };
        write!(f, "Filter::{name}")
    }
}

struct Writer<W>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.0.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.u64(v.to_bits())
    }

    fn table(&mut self, p: &FilterParams, len: usize, words: &[u64]) -> io::Result<()> {
        self.u32(p.quotient_bits())?;
        self.u32(p.remainder_bits())?;
        self.u64(p.seed())?;
        self.u8(p.requires_nonzero_remainder() as u8)?;
        self.u64(len as u64)?;
        self.u64(words.len() as u64)?;
        for &w in words {
            self.u64(w)?;
        }
        Ok(())
    }

    fn concurrent(&mut self, f: &ConcurrentQf) -> Result<(), DumpError> {
        if f.is_migrating() {
            return Err(DumpError::Migrating);
        }
        self.table(&f.params(), f.len(), &f.words())?;
        let c = f.config();
        self.f64(c.grow_at)?;
        self.u8(c.growing as u8)?;
        self.u32(c.max_quotient_bits)?;
        Ok(())
    }
}

struct Reader<R>(R);

struct RawTable {
    params: FilterParams,
    len: usize,
    words: Vec<u64>,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut b = [0; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> io::Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn bool(&mut self) -> Result<bool, DumpError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DumpError::Malformed("flag byte is not 0 or 1")),
        }
    }
    fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn table(&mut self) -> Result<RawTable, DumpError> {
        let q = self.u32()?;
        let r = self.u32()?;
        let seed = self.u64()?;
        let nonzero = self.bool()?;
        let len = self.u64()?;
        let n = self.u64()?;
        if n > MAX_WORDS {
            return Err(DumpError::Malformed("word count too large"));
        }
        let words = (0..n).map(|_| self.u64()).collect::<io::Result<Vec<_>>>()?;
        let params = FilterParams::new(q, r)?
            .with_seed(seed)
            .with_nonzero_remainder(nonzero);
        let len = usize::try_from(len).map_err(|_| DumpError::Malformed("length overflows usize"))?;
        Ok(RawTable { params, len, words })
    }

    fn concurrent(&mut self) -> Result<ConcurrentQf, DumpError> {
        let t = self.table()?;
        let config = ConcurrentConfig {
            grow_at: self.f64()?,
            growing: self.bool()?,
            max_quotient_bits: self.u32()?,
        };
        Ok(ConcurrentQf::from_raw_parts(t.params, config, t.len, &t.words)?)
    }
}

pub fn write_sequential<W: Write>(out: W, f: &QuotientFilter) -> Result<(), DumpError> {
    let mut w = Writer(out);
    w.0.write_all(&MAGIC)?;
    w.u8(KIND_SEQUENTIAL)?;
    w.u8(match f.variant() {
        Variant::ThreeBit => 0,
        Variant::TwoBit => 1,
    })?;
    w.table(f.params(), f.len(), &f.words())?;
    Ok(())
}

pub fn write_linear_probing<W: Write>(out: W, f: &LinearProbingQf) -> Result<(), DumpError> {
    let mut w = Writer(out);
    w.0.write_all(&MAGIC)?;
    w.u8(KIND_LP)?;
    w.table(f.params(), f.len(), &f.words())?;
    Ok(())
}

/// Fails with [`DumpError::Migrating`] if a growing step is under way.
pub fn write_concurrent<W: Write>(out: W, f: &ConcurrentQf) -> Result<(), DumpError> {
    let mut w = Writer(out);
    w.0.write_all(&MAGIC)?;
    w.u8(KIND_CONCURRENT)?;
    w.concurrent(f)
}

/// The filter must be quiescent: no inserts may run while it is written.
pub fn write_expandable<W: Write>(out: W, f: &ExpandableQf) -> Result<(), DumpError> {
    let mut w = Writer(out);
    w.0.write_all(&MAGIC)?;
    w.u8(KIND_EXPANDABLE)?;
    let c = f.config();
    w.u64(c.capacity as u64)?;
    w.f64(c.fpr_bound)?;
    w.f64(c.grow_at)?;
    w.u8(c.cascading as u8)?;
    w.u64(c.seed)?;
    let n = f.level_count();
    w.u32(n as u32)?;
    for i in 0..n {
        w.concurrent(f.level_filter(i).expect("live level"))?;
    }
    Ok(())
}

pub fn write<W: Write>(out: W, f: &Filter) -> Result<(), DumpError> {
    match f {
        Filter::Sequential(f) => write_sequential(out, f),
        Filter::LinearProbing(f) => write_linear_probing(out, f),
        Filter::Concurrent(f) => write_concurrent(out, f),
        Filter::Expandable(f) => write_expandable(out, f),
    }
}

pub fn read<R: Read>(input: R) -> Result<Filter, DumpError> {
    let mut r = Reader(input);
    if r.bytes::<8>()? != MAGIC {
        return Err(DumpError::BadMagic);
    }
    match r.u8()? {
        KIND_SEQUENTIAL => {
            let variant = match r.u8()? {
                0 => Variant::ThreeBit,
                1 => Variant::TwoBit,
                _ => return Err(DumpError::Malformed("unknown sequential variant")),
            };
            let t = r.table()?;
            Ok(Filter::Sequential(QuotientFilter::from_raw_parts(t.params, variant, t.len, &t.words)?))
        }
        KIND_LP => {
            let t = r.table()?;
            Ok(Filter::LinearProbing(LinearProbingQf::from_raw_parts(t.params, t.len, &t.words)?))
        }
        KIND_CONCURRENT => Ok(Filter::Concurrent(r.concurrent()?)),
        KIND_EXPANDABLE => {
            let capacity = usize::try_from(r.u64()?).map_err(|_| DumpError::Malformed("capacity overflows usize"))?;
            let config = ExpandableConfig {
                capacity,
                fpr_bound: r.f64()?,
                grow_at: r.f64()?,
                cascading: r.bool()?,
                seed: r.u64()?,
            };
            let n = r.u32()?;
            if n == 0 || n > 64 {
                return Err(DumpError::Malformed("level count out of range"));
            }
            let levels = (0..n).map(|_| r.concurrent()).collect::<Result<Vec<_>, _>>()?;
            Ok(Filter::Expandable(ExpandableQf::from_level_filters(config, levels)?))
        }
        k => Err(DumpError::UnknownKind(k)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read(&b"NOTADUMP\x01"[..]), Err(DumpError::BadMagic)));
        let mut bytes = MAGIC.to_vec();
        bytes.push(9);
        assert!(matches!(read(&bytes[..]), Err(DumpError::UnknownKind(9))));
        bytes[8] = KIND_LP;
        assert!(matches!(read(&bytes[..]), Err(DumpError::Io(_))));
    }

    #[test]
    fn concurrent_round_trip_keeps_words() {
        let f = ConcurrentQf::new(FilterParams::new(8, 6).unwrap().with_seed(5), ConcurrentConfig::default()).unwrap();
        for k in 0..230u64 {
            f.insert(&k).unwrap();
        }
        assert!(f.generation() >= 1);
        let mut buf = Vec::new();
        write_concurrent(&mut buf, &f).unwrap();
        let Filter::Concurrent(g) = read(&buf[..]).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(g.words(), f.words());
        assert_eq!(g.params(), f.params());
        assert!((0..230u64).all(|k| g.contains(&k)));
    }
}
