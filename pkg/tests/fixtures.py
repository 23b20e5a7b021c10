"""Small on-disk datasets shared by the runner and acceptance tests."""
from dan.data import synth_ranking

WIKIQA_COLUMNS = ["QuestionID", "Question", "DocumentID", "DocumentTitle", "SentenceID",
                  "Sentence", "Label"]


def write_wikiqa_fixture(path, num_questions, seed, vocab_size=40):
    """Write planted-keyword questions in the original WikiQA column layout."""
    lines = ["\t".join(WIKIQA_COLUMNS)]
    for qi, inst in enumerate(synth_ranking(num_questions, vocab_size=vocab_size, seed=seed)):
        qid, doc = f"Q{seed}_{qi}", f"D{seed}_{qi}"
        for ci, (cand, rel) in enumerate(zip(inst.candidates, inst.relevance)):
            lines.append("\t".join([qid, " ".join(inst.question), doc, "Title", f"{doc}-{ci}",
                                    " ".join(cand), str(rel)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_embeddings(path, tokens, dim, rng):
    rows = [f"{len(tokens)} {dim}"]
    rows += [t + " " + " ".join(f"{v:.6f}" for v in rng.uniform(-0.5, 0.5, dim)) for t in tokens]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path
