from .errors import ConfigError, ContractViolation, IngestError, ShortWindowWarning
from .wpe_core import EmbeddingConfig, OrdinalPattern, WpeValue, wpe

__all__ = ['ConfigError', 'ContractViolation', 'IngestError', 'ShortWindowWarning',
           'EmbeddingConfig', 'OrdinalPattern', 'WpeValue', 'wpe']
