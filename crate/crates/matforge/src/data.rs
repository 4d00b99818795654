//! Built-in data files, used when the configuration names no path.

pub const NOUNS: &str = include_str!("../data/nouns.txt");
pub const ADJECTIVES: &str = include_str!("../data/adjectives.txt");
pub const CONCRETENESS: &str = include_str!("../data/concreteness.tsv");
pub const COLORS: &str = include_str!("../data/colors.tsv");
pub const IOR: &str = include_str!("../data/ior.tsv");
pub const OPACITY: &str = include_str!("../data/opacity.tsv");
pub const WORD_VECTORS: &str = include_str!("../data/word_vectors.txt");
pub const ANTONYMS: &str = include_str!("../data/antonyms.tsv");
pub const MDL_TEMPLATE: &str = include_str!("../data/default.mdl");
