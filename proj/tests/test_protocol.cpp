#include <gtest/gtest.h>

#include <chrono>
#include <limits>
#include <thread>

#include "memex/extraction.hpp"
#include "memex/modelclient.hpp"
#include "memex/stub_server.hpp"
#include "memex/toymodel.hpp"

using namespace memex;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::invalid_argument;
}

PosteriorModel toy() {
  Corpus c;
  c.add(TokenSeq{0, 1, 2, 3, 0, 1});
  c.add(TokenSeq{3, 2, 1, 0, 3, 2}, 2.0);
  return fit(c, 0.2, VocabSpec::with_size(4));
}

}  // namespace

TEST(Protocol, UniformStubRoundTrip) {
  UniformPredictor uni(VocabSpec::with_size(5), 8);
  StubServer server(uni);
  server.start();
  auto remote = RemoteModel::connect(server.url());
  EXPECT_EQ(remote->vocab().size, 5u);
  EXPECT_EQ(remote->vocab().mask_id, 5);
  EXPECT_EQ(remote->fixed_length(), 8u);
  const Index t[] = {0, 3};
  const auto d = remote->predict(TokenSeq{5, 1, 1, 5, 1, 1, 1, 1}, t);
  ASSERT_EQ(d.size(), 2u);
  for (const auto& row : d)
    for (double p : row) EXPECT_NEAR(p, 0.2, 1e-12);
  EXPECT_EQ(code_of([&] { remote->predict(TokenSeq{5, 1, 1, 5, 1, 1, 1, 1}, std::vector<Index>{1}); }),
            ErrorCode::invalid_argument);
}

TEST(Protocol, RemoteMatchesLocalPredictor) {
  const auto m = toy();
  StubServer server(m);
  server.start();
  auto remote = RemoteModel::connect(server.url());
  const Index t[] = {1, 2, 5};
  const TokenSeq obs{0, 4, 4, 3, 0, 4};
  const auto a = m.predict(obs, t), b = remote->predict(obs, t);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t v = 0; v < 4; ++v) EXPECT_NEAR(a[i][v], b[i][v], 1e-12);
  // A full estimate through the wire equals the local one.
  SamplerConfig s;
  s.seed = 4;
  const auto local = estimate_pz(m, m.component(0), RandomMask{0.5}, Resolution::steps(2), s, 20);
  const auto wire = estimate_pz(*remote, m.component(0), RandomMask{0.5}, Resolution::steps(2), s, 20);
  EXPECT_NEAR(local.mean, wire.mean, 1e-12);
}

TEST(Protocol, SixtyFourPositionBatch) {
  UniformPredictor uni(VocabSpec::with_size(3));
  StubServer server(uni);
  server.start();
  auto remote = RemoteModel::connect(server.url());
  std::vector<Token> obs(64, 3);
  std::vector<Index> all(64);
  for (Index i = 0; i < 64; ++i) all[i] = i;
  const auto batch = remote->predict(TokenSeq(obs), all);
  ASSERT_EQ(batch.size(), 64u);
  for (Index i = 0; i < 64; i += 9) {
    const auto one = remote->predict(TokenSeq(obs), std::vector<Index>{i});
    EXPECT_EQ(one[0], batch[i]);
  }
}

TEST(Protocol, ShapeMismatchRejected) {
  UniformPredictor uni(VocabSpec::with_size(4), 4);
  StubOptions o;
  o.mutate_predict = [](nlohmann::json& r, const protocol::PredictRequest&) {
    for (auto& row : r["logprobs"]) row.erase(row.size() - 1);
  };
  StubServer server(uni, o);
  server.start();
  auto remote = RemoteModel::connect(server.url());
  EXPECT_EQ(code_of([&] { remote->predict(TokenSeq{4, 0, 0, 0}, std::vector<Index>{0}); }),
            ErrorCode::shape_mismatch);
}

TEST(Protocol, ImproperAndNonFiniteRejected) {
  UniformPredictor uni(VocabSpec::with_size(2), 2);
  StubOptions o;
  o.mutate_predict = [](nlohmann::json& r, const protocol::PredictRequest& q) {
    r["logprobs"][0][0] = q.positions[0] == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  };
  StubServer server(uni, o);
  server.start();
  auto remote = RemoteModel::connect(server.url());
  EXPECT_EQ(code_of([&] { remote->predict(TokenSeq{2, 2}, std::vector<Index>{0}); }), ErrorCode::protocol);
  // -inf has no JSON encoding; the server sends null.
  EXPECT_EQ(code_of([&] { remote->predict(TokenSeq{2, 2}, std::vector<Index>{1}); }), ErrorCode::non_finite);
}

TEST(Protocol, ManifestValidation) {
  UniformPredictor uni(VocabSpec::with_size(3), 4);
  {
    StubOptions o;
    o.version = "memex/2";
    StubServer server(uni, o);
    server.start();
    EXPECT_EQ(code_of([&] { RemoteModel::connect(server.url()); }), ErrorCode::protocol_version);
  }
  {
    StubOptions o;
    o.mutate_manifest = [](nlohmann::json& m) { m["vocab_size"] = 0; };
    StubServer server(uni, o);
    server.start();
    EXPECT_EQ(code_of([&] { RemoteModel::connect(server.url()); }), ErrorCode::protocol);
  }
  {
    StubOptions o;
    o.mutate_manifest = [](nlohmann::json& m) { m["mask_id"] = 1; };
    StubServer server(uni, o);
    server.start();
    EXPECT_EQ(code_of([&] { RemoteModel::connect(server.url()); }), ErrorCode::protocol);
  }
  // Request-level version check on the server side.
  const auto bad = nlohmann::json{{"version", "memex/0"}, {"tokens", {nullptr}}, {"positions", {0}}};
  EXPECT_EQ(code_of([&] { protocol::parse_predict_request(bad, 3); }), ErrorCode::protocol_version);
}

TEST(Protocol, SequenceOverflow) {
  UniformPredictor uni(VocabSpec::with_size(3));
  StubOptions o;
  o.max_length = 4;
  StubServer server(uni, o);
  server.start();
  auto remote = RemoteModel::connect(server.url());
  EXPECT_EQ(remote->max_length(), 4u);
  EXPECT_EQ(code_of([&] { remote->predict(TokenSeq{3, 3, 3, 3, 3}, std::vector<Index>{0}); }),
            ErrorCode::length_mismatch);
}

TEST(Protocol, Timeout) {
  UniformPredictor uni(VocabSpec::with_size(2), 2);
  StubOptions o;
  o.mutate_predict = [](nlohmann::json&, const protocol::PredictRequest&) {
    std::this_thread::sleep_for(std::chrono::milliseconds(800));
  };
  StubServer server(uni, o);
  server.start();
  ClientOptions c;
  c.timeout = std::chrono::milliseconds(200);
  c.retries = 0;
  auto remote = RemoteModel::connect(server.url(), c);
  EXPECT_EQ(code_of([&] { remote->predict(TokenSeq{2, 2}, std::vector<Index>{0}); }), ErrorCode::timeout);
}

TEST(Protocol, UnreachableEndpoint) {
  ClientOptions c;
  c.timeout = std::chrono::milliseconds(300);
  c.retries = 0;
  EXPECT_EQ(code_of([&] { RemoteModel::connect("http://127.0.0.1:1", c); }), ErrorCode::unreachable);
  EXPECT_EQ(code_of([&] { RemoteModel::connect("ftp://x", c); }), ErrorCode::invalid_argument);
}

TEST(Protocol, BearerAuth) {
  UniformPredictor uni(VocabSpec::with_size(2), 2);
  StubOptions o;
  o.bearer_token = "s3cret";
  StubServer server(uni, o);
  server.start();
  ClientOptions none, wrong, right;
  wrong.bearer_token = "nope";
  right.bearer_token = "s3cret";
  if (!std::getenv(protocol::kBearerEnv)) {
    EXPECT_EQ(code_of([&] { RemoteModel::connect(server.url(), none); }), ErrorCode::protocol);
  }
  EXPECT_EQ(code_of([&] { RemoteModel::connect(server.url(), wrong); }), ErrorCode::protocol);
  auto ok = RemoteModel::connect(server.url(), right);
  EXPECT_EQ(ok->predict(TokenSeq{2, 2}, std::vector<Index>{0}).size(), 1u);
}

TEST(Protocol, TokenizeExtension) {
  UniformPredictor uni(VocabSpec::with_size(256));
  ByteTokenizer bytes;
  StubOptions o;
  o.tokenizer = &bytes;
  StubServer server(uni, o);
  server.start();
  auto remote = RemoteModel::connect(server.url());
  RemoteTokenizer tok(remote);
  const auto e = tok.encode("hi!");
  EXPECT_EQ(e.tokens, (std::vector<Token>{104, 105, 33}));
  EXPECT_EQ(e.spans[2], (std::pair<std::size_t, std::size_t>{2, 3}));
  EXPECT_EQ(tok.name(), "byte");

  StubServer plain(uni);
  plain.start();
  auto r2 = RemoteModel::connect(plain.url());
  EXPECT_EQ(code_of([&] { RemoteTokenizer(r2).encode("x"); }), ErrorCode::protocol);
}

TEST(Protocol, ConcurrentClients) {
  const auto m = toy();
  StubServer server(m);
  server.start();
  auto remote = RemoteModel::connect(server.url());
  SamplerConfig s;
  s.seed = 2;
  RunOptions o1, o4;
  o1.keep_trials = o4.keep_trials = true;
  o4.threads = 4;
  const auto a = estimate_pz(*remote, m.component(1), RandomMask{0.5}, Resolution::max(), s, 32, o1);
  const auto b = estimate_pz(*remote, m.component(1), RandomMask{0.5}, Resolution::max(), s, 32, o4);
  EXPECT_EQ(a.per_trial, b.per_trial);
}
