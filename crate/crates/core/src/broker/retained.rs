use std::collections::BTreeMap;

/// Last retained payload per topic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RetainedStore {
    entries: BTreeMap<String, Vec<u8>>,
}

impl RetainedStore {
    /// Stores `payload` for `topic`; an empty payload deletes the entry.
    pub fn set(&mut self, topic: &str, payload: &[u8]) {
        if payload.is_empty() {
            self.entries.remove(topic);
        } else {
            self.entries.insert(topic.to_owned(), payload.to_vec());
        }
    }

    pub fn get(&self, topic: &str) -> Option<&[u8]> {
        self.entries.get(topic).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in topic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.entries.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }
}
