"""Text-based knowledge-graph embedding toolkit.

Loads triples with textual descriptions, serializes queries into unified
token templates, scores them under four formulations (joint classifier,
two-tower cosine, masked-entity softmax, constrained generation), trains the
trainable ones with hand-derived gradients, and evaluates with the filtered
ranking protocol. An LLM pipeline covers retrieval-augmented prompting, and
task adapters reuse the masked-entity model for QA, recommendation and
knowledge probing.
"""

from .errors import (ConfigurationError, DataFormatError,
                     DimensionMismatchError, KglabError, MissingKeyError,
                     TrainingDivergedError, TransportError, UnknownIdError)
from .graph import (Entity, FilterIndex, KnowledgeGraph, Relation, Triple,
                    build_filter_sets, load_knowledge_graph, load_snapshot,
                    sample_neighbors, save_snapshot, verbalize_triple)
from .serialize import (CLS, MASK, REVERSE, SEP, SerializeConfig,
                        TokenSequence, encode_hr_pair, encode_interaction_prefix,
                        encode_joint_triple, encode_masked_query, encode_tail,
                        entity_token, relation_token, tokenize)
from .encoders import (EmbeddingStore, EncoderProvider, FileStoreEncoder,
                       HashEncoder, HashedLogProb, LogProbProvider,
                       RemoteConfig, RemoteEncoder, TableLogProb,
                       UniformLogProb, hash_encode)
from .scoring import (EntityTrie, ModelParameters, build_entity_trie,
                      decode_constrained, score_generation, score_joint,
                      score_masked_entity, score_two_tower)
from .training import (TrainerConfig, TrainingState, cross_entropy_smoothed,
                       early_stop_check, ema_update, fit, fit_interactions,
                       info_nce_step, load_checkpoint, masked_entity_step,
                       save_checkpoint, topk_hard_negatives)
from .evaluation import (MetricsReport, bleu1, compute_metrics, cost_model,
                         link_prediction_eval, make_link_scorer, rank_gold,
                         rank_queries)
from .llm import (Bm25Index, LlmClientConfig, LlmEvalConfig, OpenAiChatClient,
                  Prompt, bm25_build, bm25_topn, build_prompt,
                  evaluate_llm_kgc, parse_prediction, select_candidates,
                  select_demonstrations)
from .tasks import (ClozeQuery, InteractionHistory, kgc_predict, probe_fact,
                    qa_answer, recommend_next)
from .estimators import MaskedEntityKGE, TwoTowerKGE

__version__ = "0.1.0"
