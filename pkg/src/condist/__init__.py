"""condist: distill static concept embeddings from contextualised mention
vectors by mining positive sentence pairs, contrastively training a linear
projection, filtering idiosyncratic mentions, averaging, and evaluating."""

from .store import (
    ConceptEmbeddingTable,
    MentionRecord,
    MentionStore,
    StoreFormatError,
    Vocabulary,
    build_store,
    read_store,
    read_table,
    write_store,
    write_table,
    write_table_text,
)
from .simsearch import (
    NeighborList,
    cosine,
    knn,
    knn_all,
    knn_naive,
    read_neighbor_cache,
    write_neighbor_cache,
)
from .mining import (
    MiningConfig,
    PairSet,
    as_fraction,
    compatibility,
    filter_idiosyncratic,
    freq,
    mine_neighborhood_pairs,
    mine_word_identity_pairs,
    read_kept_indices,
    read_pairs,
    write_kept_indices,
    write_pairs,
)
from .distsup import (
    ConceptPropertyTable,
    PropertyGroup,
    load_concept_property_table,
    match_corpus,
    pairs_from_groups,
    read_groups,
    resolve_members,
    tokenize,
    write_groups,
)
from .contrastive import (
    Batch,
    ProjectionModel,
    TrainConfig,
    init_projection,
    load_projection,
    loss_and_gradient,
    project_store,
    sample_batch_groups,
    sample_batch_pairs,
    save_projection,
    sup_con_loss,
    train_projection,
)
from .distill import (
    aggregate,
    anisotropy_histogram,
    concept_neighbors,
    neighbor_shift,
)
from .evaluation import (
    ClassificationReport,
    ClusteringReport,
    LabeledDataset,
    LinearClassifier,
    MentionClassifierConfig,
    MentionSetClassifier,
    binary_f1,
    evaluate_linear_classification,
    evaluate_mention_classification,
    kmeans_purity,
    load_benchmark_tsv,
    macro_f1,
    split_and_negatives,
    train_linear,
    train_mention_classifier,
)

__version__ = "0.1.0"
