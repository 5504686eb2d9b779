//! In-memory inverted index over a document collection.
//!
//! Documents are tokenized by lowercasing and splitting on any run of
//! non-alphanumeric characters. No stemming is applied and stopwords are only
//! removed when a list is supplied to the [`IndexBuilder`].

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense ordinal assigned to a document at ingestion time.
pub type DocOrd = u32;
pub type TermId = u32;

const SNAPSHOT_MAGIC: &[u8; 8] = b"SCIRIDX1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub docno: String,
    #[serde(default)]
    pub text: String,
}

impl Document {
    pub fn new(docno: impl Into<String>, text: impl Into<String>) -> Self {
        Self { docno: docno.into(), text: text.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: DocOrd,
    pub tf: u32,
}

/// Document frequency and postings for one term.
#[derive(Debug, Clone, Copy)]
pub struct TermStats<'a> {
    pub df: usize,
    pub postings: &'a [Posting],
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|s| !s.is_empty()).map(str::to_lowercase).collect()
}

/// Reads a JSONL corpus, one `{"docno", "text"}` object per line.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| Error::Corpus { line: i + 1, message: e.to_string() })?;
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Debug, Default, Clone)]
pub struct IndexBuilder {
    stopwords: HashSet<String>,
}

impl IndexBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.stopwords = words.into_iter().map(|w| w.as_ref().to_lowercase()).collect();
        self
    }

    pub fn build<I>(self, docs: I) -> Result<InvertedIndex>
    where
        I: IntoIterator<Item = Document>,
    {
        let mut term_ids: HashMap<String, TermId> = HashMap::new();
        let mut vocab: Vec<String> = Vec::new();
        let mut docnos = Vec::new();
        let mut docno_lookup = HashMap::new();
        let mut doc_lengths = Vec::new();
        let mut forward = Vec::new();

        for doc in docs {
            if docno_lookup.contains_key(&doc.docno) {
                return Err(Error::DuplicateDocno(doc.docno));
            }
            if doc.docno.is_empty() {
                return Err(Error::Corpus { line: docnos.len() + 1, message: "empty docno".into() });
            }
            let tokens = tokenize(&doc.text);
            doc_lengths.push(tokens.len() as u32);

            let mut counts: HashMap<TermId, u32> = HashMap::new();
            for tok in tokens {
                if self.stopwords.contains(&tok) {
                    continue;
                }
                let id = match term_ids.get(&tok) {
                    Some(&id) => id,
                    None => {
                        let id = vocab.len() as TermId;
                        term_ids.insert(tok.clone(), id);
                        vocab.push(tok);
                        id
                    }
                };
                *counts.entry(id).or_insert(0) += 1;
            }
            let mut terms: Vec<(TermId, u32)> = counts.into_iter().collect();
            terms.sort_unstable();
            forward.push(terms);

            docno_lookup.insert(doc.docno.clone(), docnos.len() as DocOrd);
            docnos.push(doc.docno);
        }

        if docnos.is_empty() {
            return Err(Error::EmptyCollection);
        }

        let mut stopwords: Vec<String> = self.stopwords.into_iter().collect();
        stopwords.sort();
        Ok(InvertedIndex::assemble(vocab, term_ids, docnos, docno_lookup, doc_lengths, forward, stopwords))
    }
}

/// Read-only term → postings map plus the collection statistics BM25 needs.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    term_ids: HashMap<String, TermId>,
    vocab: Vec<String>,
    postings: Vec<Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_len: f64,
    docnos: Vec<String>,
    docno_lookup: HashMap<String, DocOrd>,
    forward: Vec<Vec<(TermId, u32)>>,
    stopwords: Vec<String>,
}

impl InvertedIndex {
    pub fn build<I>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = Document>,
    {
        IndexBuilder::new().build(docs)
    }

    fn assemble(
        vocab: Vec<String>,
        term_ids: HashMap<String, TermId>,
        docnos: Vec<String>,
        docno_lookup: HashMap<String, DocOrd>,
        doc_lengths: Vec<u32>,
        forward: Vec<Vec<(TermId, u32)>>,
        stopwords: Vec<String>,
    ) -> Self {
        let mut postings = vec![Vec::new(); vocab.len()];
        // Walking documents in ordinal order keeps every postings list sorted.
        for (ord, terms) in forward.iter().enumerate() {
            for &(term, tf) in terms {
                postings[term as usize].push(Posting { doc: ord as DocOrd, tf });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_len = total as f64 / doc_lengths.len() as f64;
        Self { term_ids, vocab, postings, doc_lengths, avg_doc_len, docnos, docno_lookup, forward, stopwords }
    }

    pub fn n_docs(&self) -> usize {
        self.docnos.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_len(&self, doc: DocOrd) -> u32 {
        self.doc_lengths[doc as usize]
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn term_id(&self, term: &str) -> Option<TermId> {
        self.term_ids.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.vocab[id as usize]
    }

    pub fn term_stats(&self, term: &str) -> TermStats<'_> {
        match self.term_id(term) {
            Some(id) => {
                let postings = &self.postings[id as usize];
                TermStats { df: postings.len(), postings }
            }
            None => TermStats { df: 0, postings: &[] },
        }
    }

    pub fn df(&self, id: TermId) -> usize {
        self.postings[id as usize].len()
    }

    pub fn postings(&self, id: TermId) -> &[Posting] {
        &self.postings[id as usize]
    }

    /// Term frequencies of one document, sorted by term id.
    pub fn doc_terms(&self, doc: DocOrd) -> &[(TermId, u32)] {
        &self.forward[doc as usize]
    }

    pub fn docno(&self, doc: DocOrd) -> &str {
        &self.docnos[doc as usize]
    }

    pub fn ordinal(&self, docno: &str) -> Option<DocOrd> {
        self.docno_lookup.get(docno).copied()
    }

    pub fn docnos(&self) -> impl Iterator<Item = &str> {
        self.docnos.iter().map(String::as_str)
    }

    pub fn stopwords(&self) -> &[String] {
        &self.stopwords
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        write_u32(&mut w, self.stopwords.len() as u32)?;
        for s in &self.stopwords {
            write_str(&mut w, s)?;
        }
        write_u32(&mut w, self.vocab.len() as u32)?;
        for t in &self.vocab {
            write_str(&mut w, t)?;
        }
        write_u32(&mut w, self.docnos.len() as u32)?;
        for (ord, docno) in self.docnos.iter().enumerate() {
            write_str(&mut w, docno)?;
            write_u32(&mut w, self.doc_lengths[ord])?;
            let terms = &self.forward[ord];
            write_u32(&mut w, terms.len() as u32)?;
            for &(term, tf) in terms {
                write_u32(&mut w, term)?;
                write_u32(&mut w, tf)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Snapshot("file too short for header".into()))?;
        if &magic != SNAPSHOT_MAGIC {
            if magic.starts_with(b"SCIRIDX") {
                return Err(Error::SnapshotVersion(String::from_utf8_lossy(&magic).into_owned()));
            }
            return Err(Error::Snapshot("not an index snapshot (bad magic)".into()));
        }
        let n_stop = read_u32(&mut r)? as usize;
        let stopwords = (0..n_stop).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
        let n_vocab = read_u32(&mut r)? as usize;
        let vocab = (0..n_vocab).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
        let term_ids: HashMap<String, TermId> =
            vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as TermId)).collect();
        if term_ids.len() != vocab.len() {
            return Err(Error::Snapshot("duplicate vocabulary entry".into()));
        }

        let n_docs = read_u32(&mut r)? as usize;
        let mut docnos = Vec::with_capacity(n_docs);
        let mut docno_lookup = HashMap::with_capacity(n_docs);
        let mut doc_lengths = Vec::with_capacity(n_docs);
        let mut forward = Vec::with_capacity(n_docs);
        for ord in 0..n_docs {
            let docno = read_str(&mut r)?;
            if docno_lookup.insert(docno.clone(), ord as DocOrd).is_some() {
                return Err(Error::DuplicateDocno(docno));
            }
            docnos.push(docno);
            doc_lengths.push(read_u32(&mut r)?);
            let n_terms = read_u32(&mut r)? as usize;
            let mut terms = Vec::with_capacity(n_terms);
            for _ in 0..n_terms {
                let term = read_u32(&mut r)?;
                let tf = read_u32(&mut r)?;
                if term as usize >= vocab.len() {
                    return Err(Error::Snapshot(format!("term id {term} out of range")));
                }
                terms.push((term, tf));
            }
            forward.push(terms);
        }
        if docnos.is_empty() {
            return Err(Error::EmptyCollection);
        }
        Ok(Self::assemble(vocab, term_ids, docnos, docno_lookup, doc_lengths, forward, stopwords))
    }
}

/// Loads either a snapshot or a JSONL corpus, sniffing the magic bytes.
pub fn load_index(path: &std::path::Path) -> Result<InvertedIndex> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"SCIRIDX") {
        InvertedIndex::read_snapshot(bytes.as_slice())
    } else {
        InvertedIndex::build(read_corpus(bytes.as_slice())?)
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Snapshot("truncated snapshot".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|_| Error::Snapshot("truncated snapshot".into()))?;
    String::from_utf8(buf).map_err(|_| Error::Snapshot("invalid utf-8 string".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> InvertedIndex {
        InvertedIndex::build(vec![Document::new("d1", "a b a"), Document::new("d2", "b c"), Document::new("d3", "c")])
            .unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hubble Telescope Achievements"), ["hubble", "telescope", "achievements"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("FT921-7107"), ["ft921", "7107"]);
        assert_eq!(tokenize("--a,,B  c--"), ["a", "b", "c"]);
    }

    #[test]
    fn toy_statistics() {
        let idx = toy();
        assert_eq!(idx.n_docs(), 3);
        assert_eq!(idx.term_stats("b").df, 2);
        assert_eq!(idx.term_stats("c").df, 2);
        assert_eq!(idx.term_stats("zzz").df, 0);
        assert!(idx.term_stats("zzz").postings.is_empty());
        let a = idx.term_stats("a");
        assert_eq!(a.postings, &[Posting { doc: 0, tf: 2 }]);
        assert_eq!(idx.avg_doc_len(), 2.0);
    }

    #[test]
    fn empty_text_document() {
        let idx = InvertedIndex::build(vec![Document::new("only", "")]).unwrap();
        assert_eq!(idx.n_docs(), 1);
        assert_eq!(idx.vocab_size(), 0);
        assert_eq!(idx.avg_doc_len(), 0.0);
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        let err = InvertedIndex::build(vec![Document::new("x", "a"), Document::new("x", "b")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateDocno(ref d) if d == "x"));
        assert!(matches!(InvertedIndex::build(Vec::new()), Err(Error::EmptyCollection)));
    }

    #[test]
    fn stopwords_are_dropped_but_counted_in_length() {
        let idx = IndexBuilder::new().stopwords(["The"]).build(vec![Document::new("d", "the cat the hat")]).unwrap();
        assert_eq!(idx.term_stats("the").df, 0);
        assert_eq!(idx.doc_len(0), 4);
    }

    #[test]
    fn snapshot_roundtrip_and_version_check() {
        let idx = toy();
        let mut buf = Vec::new();
        idx.write_snapshot(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"SCIRIDX1");
        let back = InvertedIndex::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back.n_docs(), 3);
        assert_eq!(back.term_stats("b").postings, idx.term_stats("b").postings);
        assert_eq!(back.avg_doc_len(), idx.avg_doc_len());

        buf[7] = b'2';
        assert!(matches!(InvertedIndex::read_snapshot(buf.as_slice()), Err(Error::SnapshotVersion(_))));
        assert!(matches!(InvertedIndex::read_snapshot(&b"garbage!"[..]), Err(Error::Snapshot(_))));
    }

    #[test]
    fn corpus_reader_reports_line() {
        let input = "{\"docno\":\"a\",\"text\":\"x\"}\n\nnot json\n";
        match read_corpus(input.as_bytes()) {
            Err(Error::Corpus { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<Document>> {
        prop::collection::vec(prop::collection::vec("[a-e]{1,2}", 0..8), 1..12).prop_map(|docs| {
            docs.into_iter().enumerate().map(|(i, words)| Document::new(format!("doc{i}"), words.join(" "))).collect()
        })
    }

    proptest! {
        #[test]
        fn build_is_order_independent(docs in corpus_strategy(), rotate in 0usize..12) {
            let a = InvertedIndex::build(docs.clone()).unwrap();
            let mut shuffled = docs.clone();
            let k = rotate % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let b = InvertedIndex::build(shuffled).unwrap();
            prop_assert_eq!(a.avg_doc_len(), b.avg_doc_len());
            for term in ["a", "b", "c", "d", "e", "ab", "ee"] {
                let mut pa: Vec<(String, u32)> = a.term_stats(term).postings.iter()
                    .map(|p| (a.docno(p.doc).to_string(), p.tf)).collect();
                let mut pb: Vec<(String, u32)> = b.term_stats(term).postings.iter()
                    .map(|p| (b.docno(p.doc).to_string(), p.tf)).collect();
                pa.sort();
                pb.sort();
                prop_assert_eq!(pa, pb);
            }
        }

        #[test]
        fn postings_sum_to_doc_length(docs in corpus_strategy()) {
            let idx = InvertedIndex::build(docs).unwrap();
            let mut sums = vec![0u32; idx.n_docs()];
            for t in 0..idx.vocab_size() as TermId {
                let p = idx.postings(t);
                prop_assert!(p.windows(2).all(|w| w[0].doc < w[1].doc));
                for posting in p {
                    sums[posting.doc as usize] += posting.tf;
                }
            }
            for (d, &sum) in sums.iter().enumerate() {
                prop_assert_eq!(sum, idx.doc_len(d as DocOrd));
                prop_assert_eq!(idx.ordinal(idx.docno(d as DocOrd)), Some(d as DocOrd));
            }
        }
    }
}
