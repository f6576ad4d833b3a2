"""定数定義"""

# タクソノミー
ELSE_GENUS = "else"
OTHERS_CLASS = "Others"
NUM_CLASSES = 6
CANONICAL_CLASSES = (
    "Bacillariophyta",
    "Chlorophyta",
    "Cyanophyta",
    "Cryptophyceae",
    "Cyanobacteria",
    OTHERS_CLASS,
)
RARE_GENUS_THRESHOLD = 10

# データセット
TRAIN_FRACTION = 0.8
IMAGE_SIZE = 800
ROTATE_PROBABILITY = 0.5
CROP_MIN_FRACTION = 0.6
CROP_MIN_RETAINED = 0.25
# 学習中に保持するリサイズ済み画像の上限
RESIZE_CACHE_SIZE = 64

# アンカー
ANCHOR_RATIOS = (0.25, 0.5, 1.0, 2.0, 4.0)
ANCHOR_SIZES = (32, 64, 128, 256, 512)
DESK_ANCHOR_SIZES = (32, 64, 128)
DESK_STRIDES = (8, 16, 32)
FULL_STRIDES = (4, 8, 16, 32, 64)

# 推論・評価
MATCH_IOU = 0.5
NMS_IOU = 0.5
SCORE_FLOOR = 0.05
DETECTIONS_PER_IMAGE = 100
REPORT_CUTOFF = 8

# 学習
DEFAULT_LAMBDA = 0.2
BASE_LR = 0.02
MOMENTUM = 0.9
DECAY_STEPS = (6000, 7000)
DECAY_FACTOR = 0.1
FULL_TOTAL_STEPS = 8000
FULL_BATCH_SIZE = 32
DESK_BATCH_SIZE = 2
GRAD_CLIP_NORM = 10.0
ROI_SAMPLES_PER_IMAGE = 128
ROI_POSITIVE_FRACTION = 0.25
RPN_SAMPLES_PER_IMAGE = 256
RPN_POSITIVE_FRACTION = 0.5

# ボックス回帰の上限 (exp のオーバーフロー防止)
MAX_LOG_SCALE = 4.135166556742356  # log(1000 / 16)
