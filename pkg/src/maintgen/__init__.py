"""Retrieval-grounded maintenance scheme generation at desk scale.

A compact trainable language model with knowledge-retention fine-tuning,
exact inner-product retrieval with marginalized answer scoring, and a
three-agent routing pipeline, exposed as a library, CLI, and HTTP
service.
"""

from .agents import (
    AgentEnv,
    AgentState,
    Phase,
    RoutingDecision,
    RoutingKind,
    ToolRegistry,
    TraceEvent,
    agent1_parse,
    agent2_solve,
    agent3_refine,
    run,
    step,
)
from .config import AppConfig, load_config, resolve_config
from .corpus import (
    Chunk,
    Document,
    MixSpec,
    MixedDataset,
    Origin,
    QARecord,
    chunk_document,
    chunk_text,
    load_corpus,
    load_documents,
    load_qa_corpus,
    mix_datasets,
)
from .embedding import Embedder, HashEmbedder, cosine, reference_embed
from .harness import ExperimentReport, ratio_sweep
from .index import (
    ScoredHit,
    VectorIndex,
    build_index,
    load_index,
    mips_top_k,
    save_index,
)
from .lora import ClassifierHead, LoraAdapter, classify, lora_forward, merge_adapter
from .losses import KRWeightInputs, ce_loss, kl_loss, kr_loss, kr_weight
from .metrics import MetricResult, bleu, embed_score, object_accuracy, rouge_l, rouge_n
from .model import LMParams, SamplerConfig, lm_forward, sample, sequence_log_prob
from .rag import GeneratedAnswer, RetrievalPrior, generate_answer, marginalize, retrieval_prior
from .snapshot import Snapshot, SnapshotStore, build_snapshot, load_snapshot
from .tokenizer import Tokenizer, build_vocab, split_text
from .training import (
    KRConfig,
    TrainState,
    classifier_kr_gradients,
    evaluate_ce,
    fit_lm,
    init_adapters,
    kr_gradients,
    train_classifier_head,
    train_loop,
)

__version__ = "0.1.0"
