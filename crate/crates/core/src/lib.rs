//! Influence pathway discovery over social interaction data.
//!
//! The pipeline ingests posts and physical-event counts, builds a bipartite
//! user–assertion graph, optionally cleans it, learns nonnegative ideology
//! embeddings per time window, aggregates them into entity time series and
//! links entities whose series lead one another with high lagged Pearson
//! correlation.

pub mod api;
pub mod cleaning;
pub mod config;
pub mod discovery;
pub mod embedding;
pub mod entities;
pub mod graph;
pub mod ingest;
pub mod pipeline;
pub mod store;
pub mod synth;
pub mod table;

pub use cleaning::{apply_cleaning, score_links, JaccardScorer, LinkScore, LinkScorer};
pub use config::PipelineConfig;
pub use discovery::{best_edge, discover, lagged_correlation, pearson, DiscoveryConfig, InfluenceEdge, InfluenceGraph, LagCorr};
pub use embedding::{
    align_axes, build_embedding_series, propagate_embeddings, select_popular, train_window_embedding, EmbedConfig,
    EmbeddingSeries, EmbeddingTable, Provenance,
};
pub use entities::{build_entities, detect_communities, entity_series, Entity, EntityKind, EntityTimeSeries, Partition};
pub use graph::{build_graph, user_projection, window_slice, BipartiteGraph, NodeId, NodeKind, TimeWindow, UserGraph};
pub use ingest::{extract_urls, parse_events, parse_posts, DomainRef, EventRecord, Post};
