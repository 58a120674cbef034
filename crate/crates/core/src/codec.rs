//! Canonical record framing.
//!
//! A record is a 4-byte little-endian body length followed by the body. The
//! body serializes a [`UniversalDocument`] depth-first; every string is
//! prefixed with its 4-byte little-endian byte length. The content hash is
//! 64-bit FNV-1a over the whole framed record, length prefix included.

use thiserror::Error;

use crate::model::{
    Decimal, DocId, DocKind, DocNode, Lineage, LogicalTime, Reference, SourceFormat, Timestamp, TypedValue,
    UniversalDocument, VersionId,
};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, b| (hash ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("record truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid {what} tag {tag} at byte {offset}")]
    BadTag { what: &'static str, tag: u8, offset: usize },
    #[error("invalid UTF-8 string at byte {0}")]
    BadString(usize),
    #[error("invalid field value at byte {0}")]
    BadValue(usize),
    #[error("{0} trailing bytes after record body")]
    Trailing(usize),
}

/// Serializes and frames a document.
pub fn encode_record(doc: &UniversalDocument) -> Vec<u8> {
    let mut body = Vec::with_capacity(128);
    put_u64(&mut body, doc.doc_id.origin);
    put_u64(&mut body, doc.doc_id.sequence);
    put_u32(&mut body, doc.version.number());
    body.push(kind_tag(doc.kind));
    body.push(format_tag(doc.source_format));
    put_u64(&mut body, doc.ingested_at.0);
    put_node(&mut body, &doc.root);
    put_u32(&mut body, doc.references.len() as u32);
    for r in &doc.references {
        put_u64(&mut body, r.target_doc.origin);
        put_u64(&mut body, r.target_doc.sequence);
        put_u32(&mut body, r.target_version.number());
        put_str(&mut body, &r.relation);
    }
    match &doc.lineage {
        None => body.push(0),
        Some(lineage) => {
            body.push(1);
            put_str(&mut body, &lineage.producer);
            put_u32(&mut body, lineage.inputs.len() as u32);
            for (id, v) in &lineage.inputs {
                put_u64(&mut body, id.origin);
                put_u64(&mut body, id.sequence);
                put_u32(&mut body, v.number());
            }
        }
    }
    let mut record = Vec::with_capacity(body.len() + 4);
    put_u32(&mut record, body.len() as u32);
    record.extend_from_slice(&body);
    record
}

/// Decodes one framed record that must span the whole slice.
pub fn decode_record(record: &[u8]) -> Result<UniversalDocument, CodecError> {
    let mut r = Reader { buf: record, pos: 0 };
    let len = r.u32()? as usize;
    let end = 4 + len;
    if record.len() < end {
        return Err(CodecError::Truncated(record.len()));
    }
    if record.len() > end {
        return Err(CodecError::Trailing(record.len() - end));
    }
    let doc_id = DocId::new(r.u64()?, r.u64()?);
    let version = r.version()?;
    let kind = match r.u8()? {
        0 => DocKind::Base,
        1 => DocKind::Annotation,
        2 => DocKind::Derived,
        tag => return Err(CodecError::BadTag { what: "kind", tag, offset: r.pos - 1 }),
    };
    let source_format = match r.u8()? {
        0 => SourceFormat::RelationalRow,
        1 => SourceFormat::Delimited,
        2 => SourceFormat::JsonLike,
        3 => SourceFormat::XmlLike,
        4 => SourceFormat::PlainText,
        tag => return Err(CodecError::BadTag { what: "format", tag, offset: r.pos - 1 }),
    };
    let ingested_at = LogicalTime(r.u64()?);
    let root = r.node()?;
    let mut references = Vec::new();
    for _ in 0..r.u32()? {
        let target_doc = DocId::new(r.u64()?, r.u64()?);
        let target_version = r.version()?;
        references.push(Reference { target_doc, target_version, relation: r.string()? });
    }
    let lineage = match r.u8()? {
        0 => None,
        1 => {
            let producer = r.string()?;
            let mut inputs = Vec::new();
            for _ in 0..r.u32()? {
                inputs.push((DocId::new(r.u64()?, r.u64()?), r.version()?));
            }
            Some(Lineage { producer, inputs })
        }
        tag => return Err(CodecError::BadTag { what: "lineage", tag, offset: r.pos - 1 }),
    };
    if r.pos != end {
        return Err(CodecError::Trailing(end - r.pos));
    }
    Ok(UniversalDocument { doc_id, version, kind, source_format, root, references, lineage, ingested_at })
}

/// Splits a byte stream of concatenated records, as found in a segment
/// file, into `(offset, record)` pairs.
pub fn split_records(mut bytes: &[u8]) -> Result<Vec<(usize, &[u8])>, CodecError> {
    let mut out = Vec::new();
    let mut offset = 0;
    while !bytes.is_empty() {
        if bytes.len() < 4 {
            return Err(CodecError::Truncated(offset + bytes.len()));
        }
        let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        if bytes.len() < 4 + len {
            return Err(CodecError::Truncated(offset + bytes.len()));
        }
        out.push((offset, &bytes[..4 + len]));
        offset += 4 + len;
        bytes = &bytes[4 + len..];
    }
    Ok(out)
}

fn kind_tag(kind: DocKind) -> u8 {
    match kind {
        DocKind::Base => 0,
        DocKind::Annotation => 1,
        DocKind::Derived => 2,
    }
}

fn format_tag(format: SourceFormat) -> u8 {
    match format {
        SourceFormat::RelationalRow => 0,
        SourceFormat::Delimited => 1,
        SourceFormat::JsonLike => 2,
        SourceFormat::XmlLike => 3,
        SourceFormat::PlainText => 4,
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_node(buf: &mut Vec<u8>, node: &DocNode) {
    put_str(buf, &node.label);
    match &node.value {
        None => buf.push(0),
        Some(TypedValue::String(s)) => {
            buf.push(1);
            put_str(buf, s);
        }
        Some(TypedValue::Integer(i)) => {
            buf.push(2);
            buf.extend_from_slice(&i.to_le_bytes());
        }
        Some(TypedValue::Decimal(d)) => {
            buf.push(3);
            buf.extend_from_slice(&d.get().to_bits().to_le_bytes());
        }
        Some(TypedValue::Boolean(b)) => {
            buf.push(4);
            buf.push(u8::from(*b));
        }
        Some(TypedValue::Timestamp(t)) => {
            buf.push(5);
            buf.extend_from_slice(&t.0.to_le_bytes());
        }
    }
    put_u32(buf, node.children.len() as u32);
    for child in &node.children {
        put_node(buf, child);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CodecError> {
        if self.buf.len() - self.pos < n {
            return Err(CodecError::Truncated(self.buf.len()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn version(&mut self) -> Result<VersionId, CodecError> {
        let at = self.pos;
        VersionId::new(self.u32()?).ok_or(CodecError::BadValue(at))
    }

    fn string(&mut self) -> Result<String, CodecError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::BadString(at))
    }

    fn node(&mut self) -> Result<DocNode, CodecError> {
        let label = self.string()?;
        let tag_at = self.pos;
        let value = match self.u8()? {
            0 => None,
            1 => Some(TypedValue::String(self.string()?)),
            2 => Some(TypedValue::Integer(self.u64()? as i64)),
            3 => {
                let at = self.pos;
                let bits = self.u64()?;
                Some(TypedValue::Decimal(Decimal::new(f64::from_bits(bits)).ok_or(CodecError::BadValue(at))?))
            }
            4 => match self.u8()? {
                0 => Some(TypedValue::Boolean(false)),
                1 => Some(TypedValue::Boolean(true)),
                _ => return Err(CodecError::BadValue(self.pos - 1)),
            },
            5 => Some(TypedValue::Timestamp(Timestamp(self.u64()? as i64))),
            tag => return Err(CodecError::BadTag { what: "value", tag, offset: tag_at }),
        };
        let count = self.u32()? as usize;
        let mut children = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            children.push(self.node()?);
        }
        Ok(DocNode { label, value, children })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> UniversalDocument {
        UniversalDocument {
            doc_id: DocId::new(1, 2),
            version: VersionId::new(3).unwrap(),
            kind: DocKind::Annotation,
            source_format: SourceFormat::JsonLike,
            root: DocNode::new("annotation")
                .with_child(DocNode::leaf("text", TypedValue::string("acme corp")))
                .with_child(DocNode::leaf("score", TypedValue::decimal(0.25).unwrap()))
                .with_child(DocNode::leaf("ok", TypedValue::Boolean(true)))
                .with_child(DocNode::leaf("at", TypedValue::Timestamp(Timestamp(-5))))
                .with_child(DocNode::leaf("n", TypedValue::Integer(-9))),
            references: vec![Reference {
                target_doc: DocId::new(0, 1),
                target_version: VersionId::FIRST,
                relation: "annotates".into(),
            }],
            lineage: Some(Lineage { producer: "dict".into(), inputs: vec![(DocId::new(0, 1), VersionId::FIRST)] }),
            ingested_at: LogicalTime(44),
        }
    }

    #[test]
    fn fnv1a_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn record_round_trip() {
        let doc = sample();
        let record = encode_record(&doc);
        assert_eq!(u32::from_le_bytes(record[..4].try_into().unwrap()) as usize, record.len() - 4);
        assert_eq!(decode_record(&record).unwrap(), doc);
    }

    #[test]
    fn truncated_and_trailing_records_are_rejected() {
        let record = encode_record(&sample());
        assert!(matches!(decode_record(&record[..record.len() - 1]), Err(CodecError::Truncated(_))));
        let mut longer = record.clone();
        longer.push(0);
        assert!(matches!(decode_record(&longer), Err(CodecError::Trailing(1))));
    }

    #[test]
    fn split_concatenated_records() {
        let a = encode_record(&sample());
        let mut other = sample();
        other.doc_id = DocId::new(9, 9);
        let b = encode_record(&other);
        let stream = [a.clone(), b.clone()].concat();
        let parts = split_records(&stream).unwrap();
        assert_eq!(parts, vec![(0, &a[..]), (a.len(), &b[..])]);
        assert!(split_records(&stream[..stream.len() - 2]).is_err());
    }
}
