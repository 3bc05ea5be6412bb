"""Constants for the consent registry."""

FINGERPRINT_DIM = 256
FIXED_POINT_SCALE = 10**15
MIN_IMAGE_SIDE = 8

# Reference feature-map geometry for the match verifier.
FEATURE_GRID = 8
FEATURE_DEPTH = 256
WINDOW_COUNT = 55

TRAINING_FLAGS = [
    "data_mining",
    "ai_inference",
    "ai_generative_training",
    "ai_training",
]

DEFAULT_REQUIRED_FLAGS = ["ai_generative_training", "ai_training"]

INGREDIENT_ROLES = [
    "conceptImage",
    "baseModel",
    "specializedModel",
    "trainingArchive",
]

VARIANTS = ["C-OOO", "E-OOF", "E-FOF"]

QUERY_KINDS = ["unperturbed", "perturbed"]

MAX_EVENT_TOPICS = 4
TOPIC_SIZE = 32
WORD_SIZE = 32
ADDRESS_SIZE = 20

CID_PREFIX = "cid:"

FEE_SINK_ADDRESS = "0x" + "fe" * ADDRESS_SIZE

OPERATOR_ADDRESS = "0x" + "01" * ADDRESS_SIZE
PAYER_ADDRESS = "0x" + "02" * ADDRESS_SIZE
