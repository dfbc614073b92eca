"""A seconds-scale configuration for end-to-end pipeline tests."""

TINY_INI = """
[run]
train_systems = baseline,case-pc

[corpus]
n_speakers = 6
n_test_speakers = 0
speakers_per_meeting = 2
n_meetings = 4
n_dev_meetings = 1
n_eval_meetings = 1
duration = 30
lexicon_size = 20
feature_dim = 6
speaker_separation = 4.0
content_influence = 1.0

[embedder]
hidden = 12,12
dvector_dim = 8
left = 2
right = 2
word_proj = 4
heads = 2
attention_hidden = 6
window_len = 100
hop = 50
epochs = 2
batch_size = 16
train_error_rate = 0.2

[vad]
context = 3
hidden = 12
epochs = 1
frames_per_epoch = 1024
batch_size = 128

[cpd]
context = 10
rnn_hidden = 6
tdnn_hidden = 12
dvector_dim = 6
epochs = 1
steps_per_epoch = 5
batch_size = 16

[cluster]
p_grid = 50,90
restarts = 3

[experiment]
systems = baseline,case-pc
error_rates = 0,0.4
n_seeds = 1
"""
