"""Translation model: compiler, binary rule table, codecs."""

from .build import BuildOptions, BuildReport, build_binary, build_cache_manifest
from .codec import COMPRESSED, IDENTITY, CodecError, decode_targets, encode_targets
from .probing import TableFormatError
from .rules import TranslationRule
from .table import LexROStore, LookupStats, RuleTable, open_table

__all__ = [
    "BuildOptions", "BuildReport", "build_binary", "build_cache_manifest",
    "COMPRESSED", "IDENTITY", "CodecError", "decode_targets", "encode_targets",
    "TableFormatError", "TranslationRule", "LexROStore", "LookupStats", "RuleTable",
    "open_table",
]
