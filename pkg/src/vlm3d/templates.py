"""Static text assets: instruction templates, chat prompts, term dictionary.

Everything here is frozen data. The tokenizer derives its vocabulary from
these assets, so edits here change the vocabulary; keep additions appended
and never reorder existing entries.

Placeholders use ``str.format`` braces. Answer templates for segmentation
tasks contain the literal special token ``[SEG]``.
"""

from __future__ import annotations

# ---- synthetic world vocabulary ---------------------------------------

ORGANS = ["liver", "kidney", "spleen", "heart", "lung", "pancreas", "stomach", "bladder"]
ABNORMALITIES = ["tumor", "cyst", "nodule", "calcification"]
CATEGORIES = ORGANS + ABNORMALITIES

PLANES = ["axial", "coronal", "sagittal"]
PHASES = ["non-contrast", "arterial", "portal venous", "delayed"]
LOCATIONS = ["upper left", "upper right", "lower left", "lower right"]

# Per-category paint intensity; organs sit well apart so the category is
# recoverable from voxel values, abnormalities sit in a brighter band.
# Every value clears the background+ramp ceiling (~0.34) so object voxels
# are identifiable from intensity alone.
CATEGORY_INTENSITY = {
    "liver": 0.40, "kidney": 0.45, "spleen": 0.50, "heart": 0.55,
    "lung": 0.60, "pancreas": 0.65, "stomach": 0.70, "bladder": 0.75,
    "tumor": 0.80, "cyst": 0.85, "nodule": 0.90, "calcification": 0.95,
}

PHASE_BACKGROUND = {"non-contrast": 0.04, "arterial": 0.09, "portal venous": 0.14, "delayed": 0.19}

TERM_DICTIONARY: dict[str, list[str]] = {
    "liver": [
        "large organ in the upper abdomen with many metabolic functions",
        "organ that produces bile and detoxifies the blood",
        "solid abdominal organ that stores glycogen",
    ],
    "kidney": [
        "bean shaped organ that filters waste from the blood",
        "paired organ producing urine and balancing fluids",
        "organ that removes toxins and regulates blood pressure",
    ],
    "spleen": [
        "organ that filters blood and recycles old red cells",
        "lymphatic organ in the left upper abdomen",
        "soft organ involved in immune defense",
    ],
    "heart": [
        "muscular organ that pumps blood through the body",
        "central organ of the circulatory system",
        "four chambered pump supplying oxygen to tissues",
    ],
    "lung": [
        "respiratory organ responsible for gas exchange",
        "paired organ in the chest that oxygenates blood",
        "spongy organ involved in breathing",
    ],
    "pancreas": [
        "gland that secretes digestive enzymes and insulin",
        "elongated organ behind the stomach regulating blood sugar",
        "organ producing enzymes for digestion",
    ],
    "stomach": [
        "hollow organ that begins digestion of food",
        "muscular sac between the esophagus and the small bowel",
        "digestive organ that mixes food with acid",
    ],
    "bladder": [
        "hollow organ that stores urine",
        "distensible sac in the pelvis collecting urine",
        "muscular reservoir of the urinary tract",
    ],
    "tumor": [
        "abnormal mass of proliferating tissue",
        "neoplastic growth with irregular margins",
        "pathological solid mass lesion",
    ],
    "cyst": [
        "fluid filled sac with a thin wall",
        "round well defined fluid collection",
        "benign fluid containing lesion",
    ],
    "nodule": [
        "small rounded focal lesion",
        "compact spherical growth smaller than a mass",
        "discrete small solid lesion",
    ],
    "calcification": [
        "dense mineral deposit within soft tissue",
        "bright focus of calcium accumulation",
        "hard calcium containing deposit",
    ],
}

# ---- report text ------------------------------------------------------

REPORT_OPENINGS = [
    "This is an {plane} ct scan acquired in the {phase} phase.",
    "{plane} ct image obtained in the {phase} phase.",
    "Ct study in the {plane} plane, {phase} phase.",
]
REPORT_ORGAN_SENTENCES = [
    "The {category} is seen in the {location} region.",
    "A normal {category} appears in the {location} region.",
    "The {category} occupies the {location} region.",
]
REPORT_ABNORMALITY_SENTENCES = [
    "There is a {category} in the {location} region.",
    "A {category} is noted in the {location} region.",
    "An area of {category} is present in the {location} region.",
]
REPORT_NORMAL_CLOSING = "No focal abnormality is identified."

# ---- task instruction templates ---------------------------------------

REPORT_INSTRUCTIONS = [
    "Can you provide a caption consists of findings for this medical image?",
    "Describe the findings of the medical image you see.",
    "Please caption this medical scan with findings.",
    "What is the findings of this image?",
    "Describe this medical scan with findings.",
    "Please write a caption consists of findings for this image.",
    "Can you summarize with findings the images presented?",
    "What are the findings presented in this medical scan?",
    "Can you provide a description consists of findings of this medical scan?",
]

REC_CATEGORY_QUESTIONS = [
    "Can you find the {} in this image? Give coordinates.",
    "Can you find {} in this image? Please output the coordinates.",
    "Please bounding the {} by box in this image.",
    "Where is {} in this image? Please respond with a bounding box.",
    "Where is {} in this image? Please output the box.",
    "Can you locate the {} in this image? Please output its coordinates.",
    "Could you mark the {} by bounding box in this image?",
    "Where can I find the {} in this image? Please provide its bounding box.",
    "Identify the indicated {} in this image. Please provide the coordinates of its bounding box.",
]
REC_ANSWERS = [
    "Coordinates are {}.",
    "Sure, {}.",
    "Sure, it is {}.",
    "Sure, the bounding box is {}.",
    "{}.",
    "Here are the coordinates: {}.",
    "Of course, it's located at {}.",
    "The bounding box is given by {}.",
    "The box is {}.",
]
REC_DESCRIPTION_QUESTIONS = [
    "Description: {} Please answer and find it by box based on the above description.",
    "Definition: {} Please answer and show the bounding box based on the above definition.",
    "Description: {} Can you answer and find it by coordinates based on the description?",
    "Definition: {} Please output the bounding box and answer based on the definition.",
    "Description: {} Respond and locate it using a bounding box according to the description.",
    "Definition: {} Please provide an answer and display the bounding box according to the given definition.",
]
REC_DESCRIPTION_ANSWERS = [
    "The target is {} and the coordinates is {}.",
    "The category is {} and the bounding box is {}.",
    "It is {}, {}.",
    "The target is identified as {} and its coordinates are {}.",
    "The category is {}, the bounding box is provided as {}.",
]

REG_CATEGORY_QUESTIONS = [
    "What target is present within the coordinates {}?",
    "Does the bounding box {} contain any target?",
    "Within the specified region {}, what target is present?",
    "Do you know what it is in the bounding box {}?",
    "What is it in this region {}?",
    "What object is located within the coordinates {}?",
    "Within the specified area {}, what object can be found?",
    "Can you identify the object within the bounding box {}?",
    "What object is present in this region {}?",
]
REG_ANSWERS = [
    "The target is {}.",
    "Sure, the bounding box contains {}.",
    "Sure, it is {}.",
    "Sure, {} is in the bounding box.",
    "{}.",
    "The object is {}.",
    "Of course, it's {}.",
    "Certainly, {} can be found in the bounding box.",
    "Yes, the bounding box includes {}.",
]
REG_DESCRIPTION_QUESTIONS = [
    "Please describe the target and its function based on the box {} in the image.",
    "Do you know what is it in this bounding box {}? Answer and explain it.",
    "What's the target in the bounding box {}? What function does it have?",
    "What is the area marked with a box {} in the image? Can you explain it?",
    "Could you describe the object and its purpose within the bounding box {} in the image?",
]
REG_DESCRIPTION_ANSWERS = [
    "Sure, it is {}. {}.",
    "The category is {}. {}.",
    "It is {}, {}.",
    "The target is identified as {} and its description is {}.",
    "The category is {}. Description: {}.",
]

SEG_SEMANTIC_QUESTIONS = [
    "Can you segment the {} in this image?",
    "Can you segment {} in this image? Please output the mask.",
    "Please segment the {} in this image.",
    "What is {} in this image? Please respond with segmentation mask.",
    "What is {} in this image? Please output segmentation mask.",
    "Could you provide a segmentation for the {}?",
    "Segment {} from this image and provide the mask, please.",
    "Please provide a segmentation mask for the {} in this image.",
    "Can you identify and segment the {} in this image?",
]
SEG_SEMANTIC_ANSWERS = [
    "It is [SEG].",
    "Sure, [SEG].",
    "Sure, it is [SEG].",
    "Sure, the segmentation result is [SEG].",
    "The segmentation indicates [SEG].",
    "According to the segmentation, it is [SEG].",
    "The segmentation reveals [SEG].",
    "The segmentation suggests [SEG].",
    "From the segmentation, it appears to be [SEG].",
]
SEG_REFERRING_QUESTIONS = [
    "Description: {} Please answer and segment based on the above description.",
    "Definition: {} Please answer and segment based on the above definition.",
    "Description: {} Can you answer and segment it based on the above description or definition.",
    "Definition: {} Please output segmentation mask and answer based on the above description or definition.",
    "Provided description: {} Please segment accordingly.",
    "Given definition: {} Please provide segmentation and answer according to it.",
]
SEG_REFERRING_ANSWERS = [
    "The target is {} and the segmentation mask is [SEG].",
    "The category is {} and the mask is [SEG].",
    "It is {}, [SEG].",
    "Identified as {}, here is the segmentation: [SEG].",
    "Categorized as {}, the segmentation is: [SEG].",
]

# ---- chat prompts for generation, checking and scoring -----------------

VQA_GENERATION_PROMPT = """You are a medical AI visual assistant that can analyze a single CT image. You receive the file name of the CT image and the medical diagnosis report.

The task is to use the provided CT image and report information to create plausible 9 questions about the image. Each question corresponds to four options, and these questions come from the following 5 aspects:
1). Planes (axial, sagittal, coronal);
2). CT phase (non-contrast, arterial phase, portal venous phase, delayed phase, etc.);
3). Organ;
4). Abnormality type or description;
5). Abnormality position;

Image: {image_file_name}
Report: {text}

Desired format:
1). Planes
Question-1: ...? Choice: A. ... B. ... C. ... D. ... Answer: A. ...
2). CT phase
Question-2: ...? Choice: A. ... B. ... C. ... D. ... Answer: A. ...
3). Organ
Question-3: ...? Choice: A. ... B. ... C. ... D. ... Answer: A. ...
4). Abnormality type or description
Question-4: ...? Choice: A. ... B. ... C. ... D. ... Answer: A. ...
Question-5: ...? Choice: A. ... B. ... C. ... D. ... Answer: A. ...
Question-6: ...? Choice: A. ... B. ... C. ... D. ... Answer: A. ...
5). Abnormality position
Question-7: ...? Choice: A. ... B. ... C. ... D. ... Answer: A. ...
Question-8: ...? Choice: A. ... B. ... C. ... D. ... Answer: A. ...
Question-9: ...? Choice: A. ... B. ... C. ... D. ... Answer: A. ...

Make the correct answers randomly distributed among the four choices. Please be careful not to mention the file name and report. Always ask questions and answer as if directly looking at the image."""

REFSEG_GENERATION_PROMPT = """You are a medical AI visual assistant that can analyze a single CT image. Unfortunately you can't see the image but you can receive a diagnostic report of a local area in the CT image.

The task is to use the provided report information to create plausible 6 questions and answers about the image for reasoning segmentation tasks.

Report: {text}

Questions and answers need to be structured from the report, but don't mention the report. The question needs to be about a specific lesion area and requires segmentation of this area. The answer needs to use only one [SEG] symbol to refer to the segmentation area and provide a text explanation.

Desired output format:
1). Description-based
Question-1: ...? Answer: ...
Question-2: ...? Answer: ...
Question-3: ...? Answer: ...
2). Reasoning-based
Question-4: ...? Answer: ...
Question-5: ...? Answer: ...
Question-6: ...? Answer: ...

Please construct a total of 6 sets of question and answer pairs according to the desired format, 3 sets of each type. Always ask questions and answer as if directly looking at the image."""

CHECK_PROMPT = """You are a medical AI assistant. This is a question from a visual question-answering dataset. Questions are generated based on information from images and reports, and the generated data inevitably contains certain errors.

Please use the following information to determine whether the content described in the question is consistent with the text report and whether the answer is correct.

Image Path: {img_file_name}
Report: {text}
Question: {question}
Choices: A. {choice_a} B. {choice_b} C. {choice_c} D. {choice_d}
Answer Choice: {answer_choice}. {answer}

If there is an error, please answer 'NO' first and give a more reasonable question and answer. If it is basically correct, answer 'Yes' directly. Do not give redundant answers."""

SCORE_PROMPT = """You are an AI assistant, please evaluate based on the following.

Please refer to the ground truth and prediction based on the following two paragraphs, identify the aspects mentioned in the ground truth, and calculate the percentage of these aspects that are either correctly mentioned or partially matched in the prediction, scoring from 0 to 100.

Ground truth: {answer}
Prediction: {prediction}

Please follow the output format:
Score: xx. The reason is ......"""

# ---- closed VQA question phrasing (used by the offline transcripts) ----

VQA_PLANE_QUESTIONS = [
    "In which plane is this image acquired?",
    "What is the imaging plane of this scan?",
    "Which anatomical plane does this image show?",
]
VQA_PHASE_QUESTIONS = [
    "Which contrast phase was this scan acquired in?",
    "What is the ct phase of this image?",
    "Which acquisition phase does this scan show?",
]
VQA_ORGAN_QUESTIONS = [
    "Which of the following organs is visible in this image?",
    "Which organ can be identified in this scan?",
    "Which of these organs is present in the image?",
]
VQA_ABNORMALITY_QUESTIONS = [
    "What type of abnormality is present in the {location} region?",
    "Which abnormality can be seen in the {location} region?",
    "What kind of lesion appears in the {location} region?",
]
VQA_ABNORMALITY_ABSENT_QUESTIONS = [
    "Is any focal abnormality present in this image?",
    "Does this scan show a focal lesion?",
    "Is a focal lesion visible in this image?",
]
VQA_ABSENT_OPTIONS = ["yes", "no", "cannot be determined", "not applicable"]
VQA_LOCATION_QUESTIONS = [
    "Where is the {category} located in this image?",
    "In which region does the {category} appear?",
    "Which region contains the {category}?",
]


def all_template_text() -> list[str]:
    """Every static string above, for vocabulary construction."""
    out: list[str] = []
    out.extend(CATEGORIES + PLANES + PHASES + LOCATIONS)
    for descs in TERM_DICTIONARY.values():
        out.extend(descs)
    out.extend(REPORT_OPENINGS + REPORT_ORGAN_SENTENCES + REPORT_ABNORMALITY_SENTENCES)
    out.append(REPORT_NORMAL_CLOSING)
    out.extend(REPORT_INSTRUCTIONS)
    out.extend(REC_CATEGORY_QUESTIONS + REC_ANSWERS + REC_DESCRIPTION_QUESTIONS + REC_DESCRIPTION_ANSWERS)
    out.extend(REG_CATEGORY_QUESTIONS + REG_ANSWERS + REG_DESCRIPTION_QUESTIONS + REG_DESCRIPTION_ANSWERS)
    out.extend(SEG_SEMANTIC_QUESTIONS + SEG_SEMANTIC_ANSWERS)
    out.extend(SEG_REFERRING_QUESTIONS + SEG_REFERRING_ANSWERS)
    out.extend(VQA_PLANE_QUESTIONS + VQA_PHASE_QUESTIONS + VQA_ORGAN_QUESTIONS)
    out.extend(VQA_ABNORMALITY_QUESTIONS + VQA_ABNORMALITY_ABSENT_QUESTIONS + VQA_ABSENT_OPTIONS)
    out.extend(VQA_LOCATION_QUESTIONS)
    out.extend([
        "question", "answer", "choice", "segment", "describe", "caption", "options",
        "true", "false", "unknown", "none", "visible", "present", "scan", "image",
        "bone", "soft", "tissue", "contrast", "window", "oblique", "mixed",
    ])
    return out
