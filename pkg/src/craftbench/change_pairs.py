"""The bundled source-to-target change-pair table.

79 directed pairs over 79 categories in 11 supercategories; every pair
swaps within its own supercategory.  The tuples are (source, target,
supercategory); category ids are assigned by first appearance below.
"""

CHANGE_PAIR_VERSION = "79-pairs-v1"

SUPERCATEGORIES = (
    "vehicle",
    "outdoor",
    "animal",
    "accessory",
    "sports",
    "kitchen",
    "food",
    "furniture",
    "electronic",
    "appliance",
    "indoor",
)

PAIRS_PER_SUPERCATEGORY = {
    "vehicle": 8,
    "outdoor": 5,
    "animal": 10,
    "accessory": 5,
    "sports": 10,
    "kitchen": 7,
    "food": 10,
    "furniture": 6,
    "electronic": 6,
    "appliance": 5,
    "indoor": 7,
}

CHANGE_PAIRS = (
    ("bicycle", "motorcycle", "vehicle"),
    ("motorcycle", "bicycle", "vehicle"),
    ("car", "bus", "vehicle"),
    ("bus", "truck", "vehicle"),
    ("train", "airplane", "vehicle"),
    ("truck", "car", "vehicle"),
    ("airplane", "bus", "vehicle"),
    ("boat", "train", "vehicle"),
    ("traffic light", "stop sign", "outdoor"),
    ("fire hydrant", "stop sign", "outdoor"),
    ("stop sign", "traffic light", "outdoor"),
    ("parking meter", "bench", "outdoor"),
    ("bench", "parking meter", "outdoor"),
    ("bird", "cat", "animal"),
    ("cat", "dog", "animal"),
    ("dog", "cat", "animal"),
    ("horse", "sheep", "animal"),
    ("sheep", "cow", "animal"),
    ("cow", "horse", "animal"),
    ("elephant", "bear", "animal"),
    ("bear", "elephant", "animal"),
    ("zebra", "giraffe", "animal"),
    ("giraffe", "zebra", "animal"),
    ("backpack", "handbag", "accessory"),
    ("umbrella", "handbag", "accessory"),
    ("handbag", "suitcase", "accessory"),
    ("tie", "handbag", "accessory"),
    ("suitcase", "backpack", "accessory"),
    ("frisbee", "sports ball", "sports"),
    ("skis", "snowboard", "sports"),
    ("snowboard", "skateboard", "sports"),
    ("sports ball", "kite", "sports"),
    ("kite", "baseball bat", "sports"),
    ("baseball bat", "baseball glove", "sports"),
    ("baseball glove", "tennis racket", "sports"),
    ("skateboard", "surfboard", "sports"),
    ("surfboard", "skis", "sports"),
    ("tennis racket", "frisbee", "sports"),
    ("bottle", "wine glass", "kitchen"),
    ("wine glass", "cup", "kitchen"),
    ("cup", "fork", "kitchen"),
    ("fork", "knife", "kitchen"),
    ("knife", "spoon", "kitchen"),
    ("spoon", "bowl", "kitchen"),
    ("bowl", "bottle", "kitchen"),
    ("banana", "apple", "food"),
    ("apple", "orange", "food"),
    ("sandwich", "hot dog", "food"),
    ("orange", "banana", "food"),
    ("broccoli", "carrot", "food"),
    ("carrot", "hot dog", "food"),
    ("hot dog", "pizza", "food"),
    ("pizza", "donut", "food"),
    ("donut", "cake", "food"),
    ("cake", "apple", "food"),
    ("chair", "couch", "furniture"),
    ("couch", "potted plant", "furniture"),
    ("potted plant", "bed", "furniture"),
    ("bed", "dining table", "furniture"),
    ("dining table", "toilet", "furniture"),
    ("toilet", "chair", "furniture"),
    ("tv", "laptop", "electronic"),
    ("laptop", "mouse", "electronic"),
    ("mouse", "remote", "electronic"),
    ("remote", "keyboard", "electronic"),
    ("keyboard", "cell phone", "electronic"),
    ("cell phone", "tv", "electronic"),
    ("microwave", "oven", "appliance"),
    ("oven", "toaster", "appliance"),
    ("toaster", "sink", "appliance"),
    ("sink", "refrigerator", "appliance"),
    ("refrigerator", "microwave", "appliance"),
    ("book", "clock", "indoor"),
    ("clock", "vase", "indoor"),
    ("vase", "scissors", "indoor"),
    ("scissors", "teddy bear", "indoor"),
    ("teddy bear", "hair drier", "indoor"),
    ("hair drier", "toothbrush", "indoor"),
    ("toothbrush", "book", "indoor"),
)
