"""NLG and retrieval metrics and cosine-similarity answer ranking."""
from .nlg import bleu, cider, corpus_bleu, lcs_length, meteor_exact, nlg_scores, rouge_l
from .ranking import BuiltinEmbedder, EmbeddingProvider, RemoteEmbedder, rank_candidates
from .report import format_table, nlg_report
from .retrieval import RankedCandidates, ndcg, order_by_scores, retrieval_metrics

__all__ = [
    "BuiltinEmbedder", "EmbeddingProvider", "RankedCandidates", "RemoteEmbedder",
    "bleu", "cider", "corpus_bleu", "format_table", "lcs_length", "meteor_exact", "ndcg",
    "nlg_report", "nlg_scores", "order_by_scores", "rank_candidates", "retrieval_metrics", "rouge_l",
]
