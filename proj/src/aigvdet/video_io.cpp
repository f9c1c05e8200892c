#include "aigvdet/video_io.hpp"

extern "C" {
#include <libavcodec/avcodec.h>
#include <libavformat/avformat.h>
#include <libavutil/imgutils.h>
#include <libavutil/opt.h>
#include <libswscale/swscale.h>
}

#include <algorithm>
#include <cmath>
#include <cstring>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "aigvdet/error.hpp"

namespace aigvdet {
namespace {

// Encoder statistics and probe chatter go to stderr by default; keep only errors.
[[maybe_unused]] const bool kLibavQuiet = (av_log_set_level(AV_LOG_ERROR), true);

std::string av_error(int err) {
  char buf[AV_ERROR_MAX_STRING_SIZE] = {0};
  av_strerror(err, buf, sizeof(buf));
  return buf;
}

struct FormatInputDeleter {
  void operator()(AVFormatContext* ctx) const { avformat_close_input(&ctx); }
};
struct CodecContextDeleter {
  void operator()(AVCodecContext* ctx) const { avcodec_free_context(&ctx); }
};
struct FrameDeleter {
  void operator()(AVFrame* f) const { av_frame_free(&f); }
};
struct PacketDeleter {
  void operator()(AVPacket* p) const { av_packet_free(&p); }
};
struct SwsDeleter {
  void operator()(SwsContext* s) const { sws_freeContext(s); }
};

using InputPtr = std::unique_ptr<AVFormatContext, FormatInputDeleter>;
using CodecPtr = std::unique_ptr<AVCodecContext, CodecContextDeleter>;
using FramePtr = std::unique_ptr<AVFrame, FrameDeleter>;
using PacketPtr = std::unique_ptr<AVPacket, PacketDeleter>;
using SwsPtr = std::unique_ptr<SwsContext, SwsDeleter>;

// Sequential decoder over the best video stream.
class Decoder {
 public:
  explicit Decoder(const std::filesystem::path& path) : path_(path) {
    AVFormatContext* raw = nullptr;
    int err = avformat_open_input(&raw, path.c_str(), nullptr, nullptr);
    if (err < 0) fail(ErrorCode::kDecode, fmt::format("cannot open {}: {}", path.string(), av_error(err)));
    fmt_.reset(raw);
    err = avformat_find_stream_info(fmt_.get(), nullptr);
    if (err < 0) fail(ErrorCode::kDecode, fmt::format("no stream info in {}: {}", path.string(), av_error(err)));
    AVCodec* codec = nullptr;  // libavformat 58 takes a non-const pointer here
    stream_ = av_find_best_stream(fmt_.get(), AVMEDIA_TYPE_VIDEO, -1, -1, &codec, 0);
    if (stream_ < 0 || codec == nullptr) fail(ErrorCode::kDecode, "no decodable video stream in " + path.string());
    ctx_.reset(avcodec_alloc_context3(codec));
    avcodec_parameters_to_context(ctx_.get(), fmt_->streams[stream_]->codecpar);
    ctx_->thread_count = 1;
    err = avcodec_open2(ctx_.get(), codec, nullptr);
    if (err < 0) fail(ErrorCode::kDecode, fmt::format("cannot open decoder for {}: {}", path.string(), av_error(err)));
    const AVRational rate = av_guess_frame_rate(fmt_.get(), fmt_->streams[stream_], nullptr);
    fps_ = rate.den != 0 ? av_q2d(rate) : 0.0;
    frame_.reset(av_frame_alloc());
    packet_.reset(av_packet_alloc());
  }

  double fps() const { return fps_; }
  int width() const { return ctx_->width; }
  int height() const { return ctx_->height; }

  // Returns false at end of stream.
  bool next(AVFrame*& out) {
    while (true) {
      const int got = avcodec_receive_frame(ctx_.get(), frame_.get());
      if (got == 0) {
        out = frame_.get();
        return true;
      }
      if (got == AVERROR_EOF) return false;
      if (got != AVERROR(EAGAIN)) fail(ErrorCode::kDecode, fmt::format("decode error in {}: {}", path_.string(), av_error(got)));
      if (flushing_) return false;
      if (!pending_) {
        const int rd = av_read_frame(fmt_.get(), packet_.get());
        if (rd < 0) {
          flushing_ = true;
          avcodec_send_packet(ctx_.get(), nullptr);
          continue;
        }
      }
      pending_ = false;
      if (packet_->stream_index == stream_) {
        const int sent = avcodec_send_packet(ctx_.get(), packet_.get());
        if (sent == AVERROR(EAGAIN)) {
          pending_ = true;  // resend after the decoder hands out a frame
          continue;
        }
        if (sent < 0) {
          av_packet_unref(packet_.get());
          fail(ErrorCode::kDecode, fmt::format("corrupt packet in {}: {}", path_.string(), av_error(sent)));
        }
      }
      av_packet_unref(packet_.get());
    }
  }

  RgbImage to_rgb(const AVFrame* f) {
    sws_.reset(sws_getCachedContext(sws_.release(), f->width, f->height, static_cast<AVPixelFormat>(f->format), f->width,
                                    f->height, AV_PIX_FMT_RGB24, SWS_BILINEAR | SWS_ACCURATE_RND | SWS_FULL_CHR_H_INT,
                                    nullptr, nullptr, nullptr));
    require(sws_ != nullptr, ErrorCode::kDecode, "cannot create pixel converter");
    RgbImage img(f->width, f->height);
    uint8_t* dst[4] = {img.mat().data, nullptr, nullptr, nullptr};
    int dst_stride[4] = {static_cast<int>(img.mat().step[0]), 0, 0, 0};
    sws_scale(sws_.get(), f->data, f->linesize, 0, f->height, dst, dst_stride);
    return img;
  }

 private:
  std::filesystem::path path_;
  InputPtr fmt_;
  CodecPtr ctx_;
  FramePtr frame_;
  PacketPtr packet_;
  SwsPtr sws_;
  int stream_ = -1;
  double fps_ = 0.0;
  bool flushing_ = false;
  bool pending_ = false;
};

}  // namespace

VideoInfo probe_video(const std::filesystem::path& path) {
  Decoder dec(path);
  VideoInfo info;
  info.fps = dec.fps();
  AVFrame* f = nullptr;
  while (dec.next(f)) {
    if (info.frame_count == 0) {
      info.width = f->width;
      info.height = f->height;
    }
    ++info.frame_count;
  }
  if (info.frame_count == 0) {
    info.width = dec.width();
    info.height = dec.height();
  }
  return info;
}

DecodedFrames decode_frames(const std::filesystem::path& path, const std::vector<int>& indices) {
  for (std::size_t i = 1; i < indices.size(); ++i)
    require(indices[i] > indices[i - 1], ErrorCode::kInvalidArgument, "frame indices must be strictly increasing");
  require(indices.empty() || indices.front() >= 0, ErrorCode::kInvalidArgument, "frame indices must be non-negative");

  Decoder dec(path);
  DecodedFrames out;
  out.fps = dec.fps();
  std::size_t want = 0;
  int index = 0;
  AVFrame* f = nullptr;
  while (want < indices.size() && dec.next(f)) {
    if (index == indices[want]) {
      out.frames.push_back(dec.to_rgb(f));
      out.indices.push_back(index);
      ++want;
    }
    ++index;
  }
  if (want < indices.size()) {
    spdlog::warn("{}: stream has {} frames; dropped {} requested indices past the end", path.string(), index,
                 indices.size() - want);
  }
  return out;
}

struct VideoWriter::Impl {
  std::filesystem::path path;
  AVFormatContext* fmt = nullptr;
  CodecPtr ctx;
  AVStream* stream = nullptr;
  FramePtr frame;
  PacketPtr packet;
  SwsPtr sws;
  int width = 0;
  int height = 0;
  std::int64_t pts = 0;
  bool header_written = false;
  bool closed = false;

  ~Impl() {
    if (fmt != nullptr) {
      if (!(fmt->oformat->flags & AVFMT_NOFILE) && fmt->pb != nullptr) avio_closep(&fmt->pb);
      avformat_free_context(fmt);
    }
  }

  void drain(bool flush) {
    const int sent = avcodec_send_frame(ctx.get(), flush ? nullptr : frame.get());
    if (sent < 0 && !(flush && sent == AVERROR_EOF)) fail(ErrorCode::kEncode, "encode failed: " + av_error(sent));
    while (true) {
      const int got = avcodec_receive_packet(ctx.get(), packet.get());
      if (got == AVERROR(EAGAIN) || got == AVERROR_EOF) return;
      if (got < 0) fail(ErrorCode::kEncode, "encode failed: " + av_error(got));
      // A zero-duration final sample is cut by the MP4 edit list, losing the last frame.
      if (packet->duration == 0) packet->duration = 1;
      av_packet_rescale_ts(packet.get(), ctx->time_base, stream->time_base);
      packet->stream_index = stream->index;
      const int wr = av_interleaved_write_frame(fmt, packet.get());
      if (wr < 0) fail(ErrorCode::kEncode, "mux failed: " + av_error(wr));
    }
  }
};

VideoWriter::VideoWriter(const std::filesystem::path& path, int width, int height, const EncoderSettings& settings)
    : impl_(std::make_unique<Impl>()) {
  require(width >= 1 && height >= 1, ErrorCode::kInvalidArgument, "video dimensions must be positive");
  auto& s = *impl_;
  s.path = path;
  s.width = width;
  s.height = height;

  const char* encoder_name = "libx264";
  AVPixelFormat pix = AV_PIX_FMT_YUV420P;
  const char* muxer = nullptr;
  switch (settings.codec) {
    case VideoCodec::kH264Crf:
      require(width % 2 == 0 && height % 2 == 0, ErrorCode::kInvalidArgument, "H.264 yuv420p needs even dimensions");
      break;
    case VideoCodec::kH264Lossless:
      encoder_name = "libx264rgb";
      pix = AV_PIX_FMT_BGR24;
      break;
    case VideoCodec::kGif:
      encoder_name = "gif";
      pix = AV_PIX_FMT_RGB8;
      muxer = "gif";
      break;
  }
  const AVCodec* codec = avcodec_find_encoder_by_name(encoder_name);
  if (codec == nullptr) fail(ErrorCode::kBackendUnavailable, fmt::format("encoder {} not available", encoder_name));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  int err = avformat_alloc_output_context2(&s.fmt, nullptr, muxer, path.c_str());
  if (err < 0 || s.fmt == nullptr) fail(ErrorCode::kEncode, "cannot create container for " + path.string());

  s.ctx.reset(avcodec_alloc_context3(codec));
  s.ctx->width = width;
  s.ctx->height = height;
  s.ctx->pix_fmt = pix;
  const AVRational rate = av_d2q(settings.fps > 0 ? settings.fps : 25.0, 1000);
  s.ctx->time_base = av_inv_q(rate);
  s.ctx->framerate = rate;
  s.ctx->thread_count = 1;
  if (s.fmt->oformat->flags & AVFMT_GLOBALHEADER) s.ctx->flags |= AV_CODEC_FLAG_GLOBAL_HEADER;

  AVDictionary* opts = nullptr;
  if (settings.codec == VideoCodec::kH264Crf) {
    require(settings.crf >= 0 && settings.crf <= 51, ErrorCode::kInvalidArgument, "CRF must be in [0,51]");
    av_dict_set(&opts, "crf", std::to_string(settings.crf).c_str(), 0);
    av_dict_set(&opts, "preset", "medium", 0);
  } else if (settings.codec == VideoCodec::kH264Lossless) {
    av_dict_set(&opts, "qp", "0", 0);
    av_dict_set(&opts, "preset", "ultrafast", 0);
  }
  err = avcodec_open2(s.ctx.get(), codec, &opts);
  av_dict_free(&opts);
  if (err < 0) fail(ErrorCode::kEncode, fmt::format("cannot open encoder {}: {}", encoder_name, av_error(err)));

  s.stream = avformat_new_stream(s.fmt, nullptr);
  require(s.stream != nullptr, ErrorCode::kEncode, "cannot add stream");
  s.stream->time_base = s.ctx->time_base;
  avcodec_parameters_from_context(s.stream->codecpar, s.ctx.get());

  if (!(s.fmt->oformat->flags & AVFMT_NOFILE)) {
    err = avio_open(&s.fmt->pb, path.c_str(), AVIO_FLAG_WRITE);
    if (err < 0) fail(ErrorCode::kIo, fmt::format("cannot open {}: {}", path.string(), av_error(err)));
  }
  // Keeps muxer output free of the library version string.
  s.fmt->flags |= AVFMT_FLAG_BITEXACT;
  err = avformat_write_header(s.fmt, nullptr);
  if (err < 0) fail(ErrorCode::kEncode, "cannot write header: " + av_error(err));
  s.header_written = true;

  s.frame.reset(av_frame_alloc());
  s.frame->format = pix;
  s.frame->width = width;
  s.frame->height = height;
  err = av_frame_get_buffer(s.frame.get(), 0);
  if (err < 0) fail(ErrorCode::kEncode, "cannot allocate frame: " + av_error(err));
  s.packet.reset(av_packet_alloc());
  s.sws.reset(sws_getContext(width, height, AV_PIX_FMT_RGB24, width, height, pix,
                             SWS_BILINEAR | SWS_ACCURATE_RND | SWS_FULL_CHR_H_INT, nullptr, nullptr, nullptr));
  require(s.sws != nullptr, ErrorCode::kEncode, "cannot create pixel converter");
}

VideoWriter::~VideoWriter() {
  if (impl_ && !impl_->closed && impl_->header_written) {
    try {
      close();
    } catch (const std::exception& e) {
      spdlog::error("closing {}: {}", impl_->path.string(), e.what());
    }
  }
}

void VideoWriter::write(const RgbImage& img) {
  auto& s = *impl_;
  require(!s.closed, ErrorCode::kEncode, "write after close");
  require(img.width() == s.width && img.height() == s.height, ErrorCode::kShape,
          fmt::format("frame is {}x{}, writer expects {}x{}", img.width(), img.height(), s.width, s.height));
  const int err = av_frame_make_writable(s.frame.get());
  if (err < 0) fail(ErrorCode::kEncode, "frame not writable: " + av_error(err));
  const uint8_t* src[4] = {img.mat().data, nullptr, nullptr, nullptr};
  const int src_stride[4] = {static_cast<int>(img.mat().step[0]), 0, 0, 0};
  sws_scale(s.sws.get(), src, src_stride, 0, s.height, s.frame->data, s.frame->linesize);
  s.frame->pts = s.pts++;
  s.drain(false);
}

void VideoWriter::close() {
  auto& s = *impl_;
  if (s.closed) return;
  s.closed = true;
  s.drain(true);
  const int err = av_write_trailer(s.fmt);
  if (err < 0) fail(ErrorCode::kEncode, "cannot write trailer: " + av_error(err));
}

void write_video(const std::filesystem::path& path, const std::vector<RgbImage>& frames, const EncoderSettings& settings) {
  require(!frames.empty(), ErrorCode::kInvalidArgument, "write_video needs at least one frame");
  VideoWriter writer(path, frames.front().width(), frames.front().height(), settings);
  for (const auto& f : frames) writer.write(f);
  writer.close();
}

}  // namespace aigvdet
