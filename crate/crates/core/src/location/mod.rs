//! Where the next event happens: nearest-site regions and candidate ranking.

mod regions;
mod scoring;

pub use regions::{
    assign_region, kmeans_sites, parse_sites, parse_sites_str, RegionMap, Site, SiteId,
    SITES_HEADER,
};
pub use scoring::{
    candidate_regions, rank, social_score, temporal_score, CandidateScores, HourOfWeekBucket,
    LocationContext, LocationPrediction, RankedRegion, SocialWeights, TemporalCounts,
    TemporalScore, DEFAULT_HALF_LIFE, SECONDS_PER_DAY,
};
